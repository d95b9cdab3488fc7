//! CSV output: schema header line and 12-significant-digit numbers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const SCHEMA_LINE: &str = "# scrm-lab schema v1";

/// `%.12g`: 12 significant digits, trailing zeros trimmed, scientific
/// notation outside `[1e-5, 1e12)`.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    }
}

fn trim(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// A CSV file that starts with the schema comment and any extra comment lines.
pub struct CsvOut {
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, comments: &[&str], header: &[&str]) -> std::io::Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "{SCHEMA_LINE}")?;
        for c in comments {
            writeln!(file, "# {c}")?;
        }
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        writer.write_record(header).map_err(std::io::Error::other)?;
        Ok(Self { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> std::io::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(std::io::Error::other)
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.writer.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::num;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(num(0.1 + 0.2), "0.3");
        assert_eq!(num(-0.8259414654443298), "-0.825941465444");
        assert_eq!(num(100.0), "100");
        assert_eq!(num(204700.0), "204700");
        assert_eq!(num(1.5e-7), "1.5e-07");
        assert_eq!(num(12345678901234.0), "1.23456789012e+13");
        assert_eq!(num(0.000123456789012345), "0.000123456789012");
        assert_eq!(num(999999999999.9), "1e+12");
        assert_eq!(num(0.0), "0");
        assert_eq!(num(f64::NAN), "nan");
    }
}

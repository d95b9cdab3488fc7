use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scrm_lab::{cmd_estimators, cmd_run, cmd_sweep, parse_seeds, ExperimentConfig, LabError, Options};

#[derive(Parser)]
#[command(name = "scrm-lab", version, about = "Sequential counterfactual risk minimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed and method of a rollout experiment.
    Run(Common),
    /// Bias and variance of the off-policy estimators on the cosine study.
    Estimators(Common),
    /// Fixed-lambda or logging-distance grid sweep.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seeds, e.g. `0..10` or `1,4,9`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, env = "SCRM_LAB_THREADS")]
    threads: Option<usize>,
}

type Handler = fn(&ExperimentConfig, &Options) -> Result<(), LabError>;

fn execute(cli: Cli) -> Result<(), LabError> {
    let (common, cmd): (&Common, Handler) = match &cli.command {
        Command::Run(c) => (c, cmd_run),
        Command::Estimators(c) => (c, cmd_estimators),
        Command::Sweep(c) => (c, cmd_sweep),
    };
    let cfg = ExperimentConfig::load(&common.config)?;
    let seeds = common.seeds.as_deref().map(parse_seeds).transpose()?;
    let opts = Options {
        out: common.out.clone(),
        seeds,
        threads: common.threads,
    };
    cmd(&cfg, &opts)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

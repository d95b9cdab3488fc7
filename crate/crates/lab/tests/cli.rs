use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn lab(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scrm-lab"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("SCRM_LAB_THREADS")
        .output()
        .expect("spawn scrm-lab")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Data rows, skipping comment lines and the header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const SMALL_RUN: &str = "seeds = [0, 1]\nenv.kind = \"gaussian_quadratic\"\nplan.n0 = 50\nplan.rollouts = 3\n";

#[test]
fn missing_env_exits_one_and_names_it() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "c.toml", "seeds = [1]\n");
    let out = lab(&["run"], &config, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("env"));
}

#[test]
fn invalid_values_exit_one_with_field() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "c.toml", "env.kind = \"gaussian_quadratic\"\nplan.n0 = 0\n");
    let out = lab(&["run"], &config, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("plan"));
}

#[test]
fn runtime_failure_exits_two() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "c.toml", SMALL_RUN);
    let blocker = write_config(&dir, "not-a-dir", "");
    let out = lab(&["run"], &config, &blocker);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_one_row_per_rollout_and_a_summary() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "c.toml", SMALL_RUN);
    let out_dir = dir.path().join("out");
    let out = lab(&["run"], &config, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert!(text.starts_with("# scrm-lab schema v1\nrun_id,seed,method,m,n_m,cum_n,lambda,test_loss,excess_risk,regret_partial\n"));
    let rows = rows(&out_dir.join("results.csv"));
    assert_eq!(rows.len(), 2 * 2 * (3 + 1 + 1));
    let ids: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    let mut sorted = ids.clone();
    sorted.dedup();
    assert_eq!(sorted, ["s0-scrm", "s0-crm", "s1-scrm", "s1-crm"]);
    for r in rows.iter().filter(|r| r[3] == "summary") {
        assert_eq!(r[5], "750");
    }
    let timing = rows_of(&out_dir.join("timing.csv"));
    assert_eq!(timing, 4);
}

fn rows_of(path: &Path) -> usize {
    rows(path).len()
}

#[test]
fn seeds_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "c.toml", SMALL_RUN);
    let out_dir = dir.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_scrm-lab"))
        .args(["run", "--seeds", "5..7", "--threads", "1", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let seeds: BTreeSet<String> = rows(&out_dir.join("results.csv")).into_iter().map(|r| r[1].clone()).collect();
    assert_eq!(seeds, BTreeSet::from(["5".to_string(), "6".to_string()]));
}

#[test]
fn echoed_config_reproduces_results() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "c.toml", SMALL_RUN);
    let first = dir.path().join("first");
    assert!(lab(&["run"], &config, &first).status.success());
    let second = dir.path().join("second");
    assert!(lab(&["run"], &first.join("effective_config.toml"), &second).status.success());
    let third = dir.path().join("third");
    assert!(lab(&["run"], &config, &third).status.success());
    let a = std::fs::read(first.join("results.csv")).unwrap();
    assert_eq!(a, std::fs::read(second.join("results.csv")).unwrap());
    assert_eq!(a, std::fs::read(third.join("results.csv")).unwrap());
    assert_eq!(
        std::fs::read(first.join("effective_config.toml")).unwrap(),
        std::fs::read(second.join("effective_config.toml")).unwrap()
    );
}

#[test]
fn estimators_table_shape() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        &dir,
        "c.toml",
        "env.kind = \"gaussian_quadratic\"\nestimators.n = 200\nestimators.replications = 100\n",
    );
    let out_dir = dir.path().join("out");
    assert!(lab(&["estimators"], &config, &out_dir).status.success());
    let rows = rows(&out_dir.join("estimators.csv"));
    assert_eq!(rows.len(), 20);
    let shifts: BTreeSet<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(shifts.len(), 5);
    for chunk in rows.chunks(4) {
        assert!(chunk.iter().all(|r| r[0] == chunk[0][0] && r[6] == chunk[0][6]));
        let names: Vec<&str> = chunk.iter().map(|r| r[1].as_str()).collect();
        assert_eq!(names, ["ips", "clipped_ips", "snips", "ips_ix"]);
    }
}

#[test]
fn too_few_replications_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "c.toml", "env.kind = \"gaussian_quadratic\"\nestimators.replications = 10\n");
    let out = lab(&["estimators"], &config, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("estimators.replications"));
}

#[test]
fn lambda_sweep_cells_and_tie_break() {
    let dir = TempDir::new().unwrap();
    // 1e-300 and 0 give bit-identical fits, so the best cell is a tie
    let config = write_config(
        &dir,
        "c.toml",
        "seeds = [0, 1]\nenv.kind = \"gaussian_quadratic\"\nplan.n0 = 50\nplan.rollouts = 2\n\
         sweep.lambdas = [1e-300, 0.0, 0.5, 2.0, 8.0]\n",
    );
    let out_dir = dir.path().join("out");
    let out = lab(&["sweep"], &config, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rows_of(&out_dir.join("sweep.csv")), 5 * 2 * 2);
    let best = rows(&out_dir.join("sweep_best.csv"));
    assert_eq!(best.len(), 2 * 2);
    let all = rows(&out_dir.join("sweep.csv"));
    for b in &best {
        let cell_loss = |lambda: &str| {
            all.iter()
                .find(|r| r[3] == lambda && r[4] == b[4] && r[5] == b[5])
                .map(|r| r[6].parse::<f64>().unwrap())
                .unwrap()
        };
        assert_eq!(cell_loss("0"), cell_loss("1e-300"));
        assert_ne!(b[3], "1e-300", "tie must go to the smaller lambda");
        let best_loss: f64 = b[6].parse().unwrap();
        assert!(all
            .iter()
            .filter(|r| r[4] == b[4] && r[5] == b[5])
            .all(|r| r[6].parse::<f64>().unwrap() >= best_loss));
    }
}

#[test]
fn empty_grid_exits_one() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "c.toml", "env.kind = \"gaussian_quadratic\"\nsweep.lambdas = []\n");
    let out = lab(&["sweep"], &config, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep.lambdas"));
}

#[test]
fn distance_sweep_is_labelled_and_complete() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        &dir,
        "c.toml",
        "seeds = [0]\nenv.kind = \"gaussian_quadratic\"\nplan.n0 = 50\nplan.rollouts = 2\n\
         sweep.kind = \"distance\"\nsweep.sigmas = [0.3, 1.0]\n",
    );
    let out_dir = dir.path().join("out");
    let out = lab(&["sweep"], &config, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("stand-in"));
    assert_eq!(rows_of(&out_dir.join("sweep.csv")), 6 * 2 * 2);
    assert_eq!(rows_of(&out_dir.join("sweep_best.csv")), 6 * 2);
}

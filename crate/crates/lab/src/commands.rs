//! The `run`, `estimators` and `sweep` subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use scrm_core::diagnostics::{
    best_over_sigma, distance_cell, distance_experiment, estimator_study, skyline, DistanceRow, DISTANCE_GRID,
    STUDY_ESTIMATORS,
};
use scrm_core::engine::{batch_schedule, partial_regret, run, LambdaRule, RunError};
use scrm_core::rng::Streams;
use scrm_core::{EnvSpec, EstimatorVariant, Experiment, Method, RunResult};

use crate::config::{ConfigError, EnvConfig, ExperimentConfig, SweepKind};
use crate::format::{num, opt, CsvOut};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 1,
            LabError::Runtime(_) => 2,
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Runtime(format!("i/o error: {e}"))
    }
}

impl From<scrm_core::Error> for LabError {
    fn from(e: scrm_core::Error) -> Self {
        LabError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub out: PathBuf,
    pub seeds: Option<Vec<u64>>,
    pub threads: Option<usize>,
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, LabError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().map_err(|e| LabError::Runtime(format!("cannot start worker threads: {e}")))
}

/// Applies `--seeds`, resolves defaults and echoes the effective config.
fn prepare(cfg: &ExperimentConfig, opts: &Options) -> Result<ExperimentConfig, LabError> {
    let mut cfg = cfg.clone();
    if let Some(s) = &opts.seeds {
        cfg.seeds = s.clone();
    }
    let resolved = cfg.resolve()?;
    std::fs::create_dir_all(&opts.out)?;
    std::fs::write(opts.out.join("effective_config.toml"), resolved.to_toml())?;
    Ok(resolved)
}

/// Fills `optimal_risk` from a full-information fit when there is no closed form.
fn attach_skyline(cfg: &ExperimentConfig, exp: &mut Experiment) -> Result<(), LabError> {
    if exp.optimal_risk.is_some() || cfg.evaluation.skyline_samples == 0 {
        return Ok(());
    }
    let fit = skyline(
        &exp.env,
        &exp.policy,
        &exp.theta0,
        cfg.evaluation.skyline_samples,
        cfg.evaluation.mc_samples,
        &exp.optimizer,
        &Streams::new(cfg.evaluation.skyline_seed),
    )
    .map_err(|e| LabError::Runtime(format!("skyline fit failed: {e}")))?;
    log::info!("skyline risk {:.6} (stderr {:.2e})", fit.risk.mean, fit.risk.stderr);
    exp.optimal_risk = Some(fit.risk.mean);
    Ok(())
}

pub const RESULTS_HEADER: [&str; 10] = [
    "run_id",
    "seed",
    "method",
    "m",
    "n_m",
    "cum_n",
    "lambda",
    "test_loss",
    "excess_risk",
    "regret_partial",
];

pub fn run_id(seed: u64, method: Method) -> String {
    format!("s{seed}-{}", method.name())
}

fn write_run_rows(out: &mut CsvOut, result: &RunResult, schedule: &[usize], complete: bool) -> std::io::Result<()> {
    let id = run_id(result.seed, result.method);
    let seed = result.seed.to_string();
    let regret = partial_regret(&result.records, schedule);
    for (r, reg) in result.records.iter().zip(&regret) {
        out.row([
            id.clone(),
            seed.clone(),
            result.method.name().to_string(),
            r.m.to_string(),
            r.n_m.to_string(),
            r.cum_n.to_string(),
            num(r.lambda),
            num(r.test_loss),
            opt(r.excess_risk),
            opt(*reg),
        ])?;
    }
    if complete {
        if let Some(last) = result.final_record() {
            out.row([
                id,
                seed,
                result.method.name().to_string(),
                "summary".to_string(),
                String::new(),
                result.collected.to_string(),
                String::new(),
                num(last.test_loss),
                opt(last.excess_risk),
                opt(result.regret),
            ])?;
        }
    }
    Ok(())
}

type Outcome = Result<RunResult, RunError>;

fn run_jobs(exp: &Experiment, jobs: &[(u64, Method)], threads: Option<usize>) -> Result<Vec<Outcome>, LabError> {
    let pool = pool(threads)?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, method)| {
                let start = Instant::now();
                let mut outcome = run(method, exp, seed);
                let elapsed = start.elapsed();
                match &mut outcome {
                    Ok(r) => r.wall_clock = Some(elapsed),
                    Err(e) => e.partial.wall_clock = Some(elapsed),
                }
                outcome
            })
            .collect()
    }))
}

/// One row per rollout and a summary row per run in `results.csv`; wall
/// clock times go to `timing.csv` so the results file is reproducible.
pub fn cmd_run(cfg: &ExperimentConfig, opts: &Options) -> Result<(), LabError> {
    let cfg = prepare(cfg, opts)?;
    let mut exp = cfg.experiment()?;
    attach_skyline(&cfg, &mut exp)?;
    let schedule = batch_schedule(&exp.plan)?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let mut methods: Vec<Method> = cfg.plan.methods.iter().map(|m| (*m).into()).collect();
    methods.sort();
    methods.dedup();
    let jobs: Vec<(u64, Method)> = seeds.iter().flat_map(|&s| methods.iter().map(move |&m| (s, m))).collect();
    let outcomes = run_jobs(&exp, &jobs, opts.threads)?;

    let mut results = CsvOut::create(&opts.out.join("results.csv"), &[], &RESULTS_HEADER)?;
    let mut timing = CsvOut::create(&opts.out.join("timing.csv"), &[], &["run_id", "seed", "method", "wall_clock_seconds"])?;
    let mut failures = Vec::new();
    for outcome in &outcomes {
        let (result, complete) = match outcome {
            Ok(r) => (r, true),
            Err(e) => {
                failures.push(e.to_string());
                (&e.partial, false)
            }
        };
        write_run_rows(&mut results, result, &schedule, complete)?;
        timing.row([
            run_id(result.seed, result.method),
            result.seed.to_string(),
            result.method.name().to_string(),
            format!("{:.6}", result.wall_clock.map(|d| d.as_secs_f64()).unwrap_or(f64::NAN)),
        ])?;
    }
    results.finish()?;
    timing.finish()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(LabError::Runtime(failures.join("; ")))
    }
}

pub fn estimator_name(v: EstimatorVariant) -> &'static str {
    match v {
        EstimatorVariant::Ips => "ips",
        EstimatorVariant::ClippedIps => "clipped_ips",
        EstimatorVariant::Snips => "snips",
        EstimatorVariant::IpsIx => "ips_ix",
    }
}

/// Bias and variance of every estimator on the cosine-loss study.
pub fn cmd_estimators(cfg: &ExperimentConfig, opts: &Options) -> Result<(), LabError> {
    let cfg = prepare(cfg, opts)?;
    let study = &cfg.estimators;
    if study.shifts.is_empty() {
        return Err(ConfigError::Invalid {
            field: "estimators.shifts".into(),
            message: "at least one shift is required".into(),
        }
        .into());
    }
    if study.replications < 100 {
        return Err(ConfigError::Invalid {
            field: "estimators.replications".into(),
            message: "must be >= 100".into(),
        }
        .into());
    }
    let rows = estimator_study(&study.shifts, &STUDY_ESTIMATORS, study.n, study.replications, &Streams::new(cfg.seeds[0]))?;
    let mut out = CsvOut::create(
        &opts.out.join("estimators.csv"),
        &[],
        &["shift", "estimator", "n", "replications", "bias", "variance", "truth"],
    )?;
    for r in rows {
        out.row([
            num(r.shift),
            estimator_name(r.estimator).to_string(),
            r.n.to_string(),
            r.replications.to_string(),
            num(r.summary.bias),
            num(r.summary.variance),
            num(r.summary.truth),
        ])?;
    }
    out.finish()?;
    Ok(())
}

pub const SWEEP_HEADER: [&str; 9] = [
    "kind",
    "delta0",
    "sigma",
    "lambda",
    "seed",
    "method",
    "final_test_loss",
    "final_excess_risk",
    "regret",
];

fn empty_grid(field: &str) -> LabError {
    ConfigError::Invalid {
        field: field.into(),
        message: "grid is empty".into(),
    }
    .into()
}

fn methods_and_seeds(cfg: &ExperimentConfig) -> (Vec<Method>, Vec<u64>) {
    let mut methods: Vec<Method> = cfg.plan.methods.iter().map(|m| (*m).into()).collect();
    methods.sort();
    methods.dedup();
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    (methods, seeds)
}

/// Grid sweeps: fixed lambda values, or logging distance x policy width.
/// `sweep.csv` holds one cell per grid point, seed and method;
/// `sweep_best.csv` the a-posteriori best grid value per method and seed.
pub fn cmd_sweep(cfg: &ExperimentConfig, opts: &Options) -> Result<(), LabError> {
    match cfg.sweep.kind {
        SweepKind::Lambda if cfg.sweep.lambdas.is_empty() => return Err(empty_grid("sweep.lambdas")),
        SweepKind::Distance if cfg.sweep.delta0.is_empty() => return Err(empty_grid("sweep.delta0")),
        SweepKind::Distance if cfg.sweep.sigmas.is_empty() => return Err(empty_grid("sweep.sigmas")),
        _ => {}
    }
    let cfg = prepare(cfg, opts)?;
    match cfg.sweep.kind {
        SweepKind::Lambda => lambda_sweep(&cfg, opts),
        SweepKind::Distance => distance_sweep(&cfg, opts),
    }
}

struct LambdaCell {
    lambda: f64,
    seed: u64,
    method: Method,
    result: RunResult,
}

fn lambda_sweep(cfg: &ExperimentConfig, opts: &Options) -> Result<(), LabError> {
    let mut base = cfg.experiment()?;
    attach_skyline(cfg, &mut base)?;
    let (methods, seeds) = methods_and_seeds(cfg);
    let mut lambdas = cfg.sweep.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    if let Some(bad) = lambdas.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(ConfigError::Invalid {
            field: "sweep.lambdas".into(),
            message: format!("lambda {bad} must be finite and >= 0"),
        }
        .into());
    }
    let mut jobs = Vec::new();
    for &lambda in &lambdas {
        for &seed in &seeds {
            for &method in &methods {
                jobs.push((lambda, seed, method));
            }
        }
    }
    let pool = pool(opts.threads)?;
    let cells: Vec<Result<LambdaCell, RunError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(lambda, seed, method)| {
                let mut exp = base.clone();
                exp.plan.lambda_rule = LambdaRule::Fixed(lambda);
                run(method, &exp, seed).map(|result| LambdaCell {
                    lambda,
                    seed,
                    method,
                    result,
                })
            })
            .collect()
    });
    let mut out = CsvOut::create(&opts.out.join("sweep.csv"), &[], &SWEEP_HEADER)?;
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for c in cells {
        match c {
            Ok(cell) => {
                let last = cell.result.final_record().expect("completed runs have records");
                out.row([
                    "lambda".to_string(),
                    String::new(),
                    String::new(),
                    num(cell.lambda),
                    cell.seed.to_string(),
                    cell.method.name().to_string(),
                    num(last.test_loss),
                    opt(last.excess_risk),
                    opt(cell.result.regret),
                ])?;
                ok.push(cell);
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    out.finish()?;
    let mut best = CsvOut::create(&opts.out.join("sweep_best.csv"), &[], &SWEEP_HEADER)?;
    for &method in &methods {
        for &seed in &seeds {
            // cells are in ascending lambda order, so strict improvement keeps the smaller lambda on ties
            let mut winner: Option<&LambdaCell> = None;
            for c in ok.iter().filter(|c| c.method == method && c.seed == seed) {
                let loss = c.result.final_record().map(|r| r.test_loss).unwrap_or(f64::INFINITY);
                let current = winner.and_then(|w| w.result.final_record()).map(|r| r.test_loss).unwrap_or(f64::INFINITY);
                if winner.is_none() || loss < current {
                    winner = Some(c);
                }
            }
            if let Some(w) = winner {
                let last = w.result.final_record().expect("completed runs have records");
                best.row([
                    "lambda".to_string(),
                    String::new(),
                    String::new(),
                    num(w.lambda),
                    seed.to_string(),
                    method.name().to_string(),
                    num(last.test_loss),
                    opt(last.excess_risk),
                    opt(w.result.regret),
                ])?;
            }
        }
    }
    best.finish()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(LabError::Runtime(failures.join("; ")))
    }
}

fn distance_sweep(cfg: &ExperimentConfig, opts: &Options) -> Result<(), LabError> {
    let EnvConfig::GaussianQuadratic(_) = cfg.env else {
        return Err(ConfigError::Invalid {
            field: "env.kind".into(),
            message: "the distance sweep needs gaussian_quadratic".into(),
        }
        .into());
    };
    let base = cfg.experiment()?;
    let EnvSpec::GaussianQuadratic(gq) = &base.env else {
        unreachable!("env kind checked above")
    };
    let (methods, seeds) = methods_and_seeds(cfg);
    let mut jobs = Vec::new();
    for &delta0 in &cfg.sweep.delta0 {
        for &sigma in &cfg.sweep.sigmas {
            let mut exp = distance_experiment(gq, delta0, sigma, &base.plan).map_err(|e| ConfigError::Invalid {
                field: "sweep".into(),
                message: e.to_string(),
            })?;
            exp.optimizer = base.optimizer;
            exp.delta = base.delta;
            for &method in &methods {
                for &seed in &seeds {
                    jobs.push((exp.clone(), delta0, sigma, method, seed));
                }
            }
        }
    }
    let pool = pool(opts.threads)?;
    let rows: Vec<Result<DistanceRow, scrm_core::Error>> = pool.install(|| {
        jobs.par_iter()
            .map(|(exp, delta0, sigma, method, seed)| distance_cell(exp, *delta0, *sigma, *method, *seed))
            .collect()
    });
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for r in rows {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => failures.push(e.to_string()),
        }
    }
    ok.sort_by(|a, b| {
        a.delta0
            .total_cmp(&b.delta0)
            .then(a.sigma.total_cmp(&b.sigma))
            .then(a.seed.cmp(&b.seed))
            .then(a.method.cmp(&b.method))
    });
    let stand_in = cfg.sweep.delta0 == DISTANCE_GRID;
    let comments: &[&str] = if stand_in { &["delta0 grid is a stand-in"] } else { &[] };
    let write = |path: &Path, rows: &mut dyn Iterator<Item = (f64, f64, u64, Method, f64)>| -> std::io::Result<()> {
        let mut out = CsvOut::create(path, comments, &SWEEP_HEADER)?;
        for (delta0, sigma, seed, method, loss) in rows {
            out.row([
                "distance".to_string(),
                num(delta0),
                num(sigma),
                String::new(),
                seed.to_string(),
                method.name().to_string(),
                num(loss),
                String::new(),
                String::new(),
            ])?;
        }
        out.finish()
    };
    write(
        &opts.out.join("sweep.csv"),
        &mut ok.iter().map(|r| (r.delta0, r.sigma, r.seed, r.method, r.final_loss)),
    )?;
    let best = best_over_sigma(&ok);
    write(
        &opts.out.join("sweep_best.csv"),
        &mut best.iter().map(|b| (b.delta0, b.sigma, b.seed, b.method, b.final_loss)),
    )?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(LabError::Runtime(failures.join("; ")))
    }
}

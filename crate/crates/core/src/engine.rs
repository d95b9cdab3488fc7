//! Sequential (SCRM) and re-deployment (CRM) rollout loops.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::{EnvSpec, Interaction, RiskMode};
use crate::error::{invalid, Error, Result};
use crate::estimators::ips_ix_estimate;
use crate::objective::{lambda_theoretical, svp_objective, ObjectiveConfig, DEFAULT_DELTA};
use crate::optimizer::{minimize_objective, OptimizerConfig, Termination};
use crate::policy::{ModelParams, PolicySpec};
use crate::rng::{Purpose, Streams};

/// Default Monte-Carlo size for test risks without a closed form.
pub const DEFAULT_EVAL_SAMPLES: usize = 100_000;
pub const DEFAULT_CV_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaRule {
    Theoretical,
    Fixed(f64),
    /// K-fold selection on the data of earlier rollouts.
    CrossValidated { candidates: Vec<f64>, folds: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaRule {
    /// `alpha = 1 / n` for the training sample size `n`.
    InverseN,
    Fixed(f64),
}

impl AlphaRule {
    pub fn alpha(&self, n: usize) -> f64 {
        match *self {
            AlphaRule::InverseN => 1.0 / n as f64,
            AlphaRule::Fixed(a) => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPlan {
    pub n0: usize,
    /// Index of the last rollout; the run has `rollouts + 1` batches.
    pub rollouts: usize,
    pub growth: usize,
    pub lambda_rule: LambdaRule,
    pub alpha_rule: AlphaRule,
    /// SCRM only: fit on every batch collected so far instead of the latest.
    pub pooled: bool,
}

impl RolloutPlan {
    pub fn new(n0: usize, rollouts: usize) -> Self {
        Self {
            n0,
            rollouts,
            growth: 2,
            lambda_rule: LambdaRule::Theoretical,
            alpha_rule: AlphaRule::InverseN,
            pooled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 < 2 {
            return Err(invalid("plan n0 must be >= 2"));
        }
        if self.growth != 2 {
            return Err(invalid("plan growth is fixed at 2"));
        }
        match &self.lambda_rule {
            LambdaRule::Theoretical => {}
            LambdaRule::Fixed(l) => {
                if !(*l >= 0.0) || !l.is_finite() {
                    return Err(invalid("fixed lambda must be finite and >= 0"));
                }
            }
            LambdaRule::CrossValidated { candidates, folds } => {
                if candidates.is_empty() {
                    return Err(invalid("cross-validated lambda needs at least one candidate"));
                }
                if candidates.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
                    return Err(invalid("lambda candidates must be finite and >= 0"));
                }
                if *folds < 2 {
                    return Err(invalid("cross-validation needs at least 2 folds"));
                }
            }
        }
        if let AlphaRule::Fixed(a) = self.alpha_rule {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(invalid("fixed alpha must be finite and >= 0"));
            }
        }
        batch_schedule(self).map(|_| ())
    }
}

/// `[n0, 2 n0, 4 n0, ...]` with `rollouts + 1` entries.
pub fn batch_schedule(plan: &RolloutPlan) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(plan.rollouts + 1);
    let mut n = plan.n0;
    for m in 0..=plan.rollouts {
        if m > 0 {
            n = n.checked_mul(plan.growth).ok_or(Error::ScheduleOverflow)?;
        }
        out.push(n);
    }
    // the cumulative count must fit as well
    out.iter().try_fold(0usize, |acc, &n| acc.checked_add(n)).ok_or(Error::ScheduleOverflow)?;
    Ok(out)
}

/// Number of rollouts `M = floor(log2(1 + n / n0))` for a total budget `n`.
pub fn rollouts_for_budget(n: usize, n0: usize) -> Result<usize> {
    if n0 == 0 {
        return Err(invalid("n0 must be positive"));
    }
    let ratio = 1 + n / n0;
    Ok((usize::BITS - 1 - ratio.leading_zeros()) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Scrm,
    Crm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Scrm => "scrm",
            Method::Crm => "crm",
        }
    }
}

/// Everything a run needs apart from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub env: EnvSpec,
    pub policy: PolicySpec,
    pub theta0: ModelParams,
    pub plan: RolloutPlan,
    pub delta: f64,
    pub optimizer: OptimizerConfig,
    pub risk_mode: RiskMode,
    /// `L(theta*)`, known analytically or from a skyline fit.
    pub optimal_risk: Option<f64>,
}

impl Experiment {
    /// Uses the environment's default policy family and logging model.
    pub fn with_defaults(env: EnvSpec, plan: RolloutPlan) -> Result<Self> {
        let policy = env.default_policy();
        let theta0 = env.default_logging_model(&policy);
        Self::new(env, policy, theta0, plan)
    }

    pub fn new(env: EnvSpec, policy: PolicySpec, theta0: ModelParams, plan: RolloutPlan) -> Result<Self> {
        let risk_mode = if env.has_closed_form() {
            RiskMode::ClosedForm
        } else {
            RiskMode::MonteCarlo(DEFAULT_EVAL_SAMPLES)
        };
        let optimal_risk = match (&risk_mode, env.optimal_model()) {
            (RiskMode::ClosedForm, Some(star)) => Some(env.closed_form_risk(&policy, &star)?),
            _ => None,
        };
        let exp = Self {
            env,
            policy,
            theta0,
            plan,
            delta: DEFAULT_DELTA,
            optimizer: OptimizerConfig::default(),
            risk_mode,
            optimal_risk,
        };
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.policy.validate()?;
        self.plan.validate()?;
        self.optimizer.validate()?;
        let d = self.param_dim();
        if self.theta0.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "theta0",
                expected: d,
                got: self.theta0.dim(),
            });
        }
        if self.theta0.norm() > self.optimizer.radius {
            return Err(invalid("theta0 lies outside the optimizer ball"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        if let RiskMode::MonteCarlo(0) = self.risk_mode {
            return Err(invalid("evaluation sample count must be >= 1"));
        }
        Ok(())
    }

    pub fn param_dim(&self) -> usize {
        self.policy.param_dim(self.env.context_dim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub m: usize,
    /// Size of batch `m`.
    pub n_m: usize,
    /// Samples collected in batches `0..=m`.
    pub cum_n: usize,
    /// Samples in the objective fitted at this rollout.
    pub n_train: usize,
    pub lambda: f64,
    pub alpha: f64,
    /// Model learned from the data available after batch `m`.
    pub theta: ModelParams,
    pub test_loss: f64,
    pub test_loss_stderr: f64,
    pub excess_risk: Option<f64>,
    pub objective_start: f64,
    pub objective_end: f64,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub initial_loss: f64,
    pub records: Vec<RolloutRecord>,
    /// Total interactions collected from the environment.
    pub collected: usize,
    pub regret: Option<f64>,
    pub wall_clock: Option<Duration>,
}

impl RunResult {
    pub fn final_record(&self) -> Option<&RolloutRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub error: Error,
    pub rollout: usize,
    pub context: String,
    pub partial: RunResult,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} run failed at rollout {} ({}): {}",
            self.partial.method.name(),
            self.rollout,
            self.context,
            self.error
        )
    }
}

impl core::error::Error for RunError {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// `L(theta) - L(theta*)` for a given optimal risk.
pub fn excess_risk(env: &EnvSpec, spec: &PolicySpec, theta: &ModelParams, optimal_risk: f64) -> Result<f64> {
    Ok(env.closed_form_risk(spec, theta)? - optimal_risk)
}

/// `sum_m Delta_m n_{m+1}`, with `n_{M+1} = 2 n_M`.
pub fn expected_regret(excess: &[f64], schedule: &[usize]) -> Result<f64> {
    if excess.len() != schedule.len() {
        return Err(Error::DimensionMismatch {
            what: "excess risk sequence",
            expected: schedule.len(),
            got: excess.len(),
        });
    }
    let mut total = 0.0;
    for (m, d) in excess.iter().enumerate() {
        let next = match schedule.get(m + 1) {
            Some(&n) => n as f64,
            None => 2.0 * schedule[m] as f64,
        };
        total += d * next;
    }
    Ok(total)
}

/// Pick the lambda with the smallest mean held-out IPS-IX estimate.
///
/// Folds are a seeded shuffle of `history`; ties go to the smaller lambda.
#[allow(clippy::too_many_arguments)]
pub fn select_lambda_cv<R: Rng + ?Sized>(
    history: &[Interaction],
    spec: &PolicySpec,
    theta_init: &ModelParams,
    candidates: &[f64],
    folds: usize,
    alpha_rule: AlphaRule,
    delta: f64,
    opt_cfg: &OptimizerConfig,
    rng: &mut R,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Empty("lambda candidates"));
    }
    if folds < 2 {
        return Err(invalid("cross-validation needs at least 2 folds"));
    }
    if history.len() < 2 * folds {
        return Err(Error::InsufficientSamples {
            needed: 2 * folds,
            got: history.len(),
        });
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() == 1 {
        return Ok(sorted[0]);
    }
    let mut order: Vec<usize> = (0..history.len()).collect();
    order.shuffle(rng);
    let mut assignment = vec![0usize; history.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    let d = theta_init.dim();
    let mut best = (f64::INFINITY, sorted[0]);
    for &lambda in &sorted {
        let mut score = 0.0;
        for k in 0..folds {
            let mut train = Vec::new();
            let mut held = Vec::new();
            for (i, it) in history.iter().enumerate() {
                if assignment[i] == k {
                    held.push(it.clone());
                } else {
                    train.push(it.clone());
                }
            }
            let cfg = ObjectiveConfig {
                lambda,
                alpha: alpha_rule.alpha(train.len()),
                delta,
                complexity_dim: d,
            };
            let fit = minimize_objective(&train, spec, theta_init, &cfg, &OptimizerConfig { restarts: 0, ..*opt_cfg }, rng)?;
            score += ips_ix_estimate(&held, spec, &fit.theta, alpha_rule.alpha(held.len()))?;
        }
        score /= folds as f64;
        if score < best.0 {
            best = (score, lambda);
        }
    }
    Ok(best.1)
}

fn evaluate(exp: &Experiment, theta: &ModelParams, streams: &Streams, rollout: u64) -> Result<(f64, f64)> {
    let mut rng = streams.stream(rollout, Purpose::Evaluation);
    let r = exp.env.true_risk(&exp.policy, theta, exp.risk_mode, &mut rng)?;
    Ok((r.mean, r.stderr))
}

fn choose_lambda(exp: &Experiment, history: &[Interaction], theta: &ModelParams, n_train: usize, streams: &Streams, m: usize) -> Result<f64> {
    let d = exp.param_dim();
    let theoretical = lambda_theoretical(n_train, d, exp.delta);
    match &exp.plan.lambda_rule {
        LambdaRule::Theoretical => Ok(theoretical),
        LambdaRule::Fixed(l) => Ok(*l),
        LambdaRule::CrossValidated { candidates, folds } => {
            if history.len() < 2 * folds {
                log::debug!("rollout {m}: {} past samples, lambda falls back to the theoretical value", history.len());
                return Ok(theoretical);
            }
            let mut rng = streams.stream(m as u64, Purpose::CrossValidation);
            select_lambda_cv(
                history,
                &exp.policy,
                theta,
                candidates,
                *folds,
                exp.plan.alpha_rule,
                exp.delta,
                &exp.optimizer,
                &mut rng,
            )
        }
    }
}

struct Failure {
    error: Error,
    context: &'static str,
}

fn at(context: &'static str) -> impl Fn(Error) -> Failure {
    move |error| Failure { error, context }
}

/// Runs one method on one seed; batch `m` always draws from the streams of
/// rollout `m`, so both methods see common random numbers.
pub fn run(method: Method, exp: &Experiment, seed: u64) -> core::result::Result<RunResult, RunError> {
    let streams = Streams::new(seed);
    let mut result = RunResult {
        method,
        seed,
        initial_loss: f64::NAN,
        records: Vec::new(),
        collected: 0,
        regret: None,
        wall_clock: None,
    };
    let mut m = 0usize;
    match run_inner(method, exp, &streams, &mut result, &mut m) {
        Ok(()) => Ok(result),
        Err(f) => Err(RunError {
            error: f.error,
            rollout: m,
            context: String::from(f.context),
            partial: result,
        }),
    }
}

fn run_inner(method: Method, exp: &Experiment, streams: &Streams, result: &mut RunResult, m_out: &mut usize) -> core::result::Result<(), Failure> {
    exp.validate().map_err(at("validation"))?;
    let schedule = batch_schedule(&exp.plan).map_err(at("schedule"))?;
    // the initial model is evaluated on its own stream index past the schedule
    let (initial, _) = evaluate(exp, &exp.theta0, streams, u64::MAX).map_err(at("evaluation"))?;
    result.initial_loss = initial;
    let d = exp.param_dim();
    let pool = method == Method::Crm || exp.plan.pooled;
    let keep_history = matches!(exp.plan.lambda_rule, LambdaRule::CrossValidated { .. });
    let mut pooled: Vec<Interaction> = Vec::new();
    let mut theta = exp.theta0.clone();
    let mut cum_n = 0usize;
    for (m, &n_m) in schedule.iter().enumerate() {
        *m_out = m;
        let deployed = match method {
            Method::Scrm => &theta,
            Method::Crm => &exp.theta0,
        };
        let batch = exp
            .env
            .collect(&exp.policy, deployed, n_m, streams, m as u64)
            .map_err(at("collection"))?;
        cum_n += n_m;
        result.collected += n_m;
        let lambda = choose_lambda(exp, &pooled, &theta, if pool { cum_n } else { n_m }, streams, m).map_err(at("lambda selection"))?;
        if pool || keep_history {
            pooled.extend(batch.iter().cloned());
        }
        let train: &[Interaction] = if pool { &pooled } else { &batch };
        let cfg = ObjectiveConfig {
            lambda,
            alpha: exp.plan.alpha_rule.alpha(train.len()),
            delta: exp.delta,
            complexity_dim: d,
        };
        let objective_start = svp_objective(train, &exp.policy, &theta, &cfg).map_err(at("objective"))?;
        let mut restart_rng = streams.stream(m as u64, Purpose::Restarts);
        let fit = minimize_objective(train, &exp.policy, &theta, &cfg, &exp.optimizer, &mut restart_rng)
            .map_err(|e| Failure {
                error: e.error,
                context: "optimization",
            })?;
        let (test_loss, test_loss_stderr) = evaluate(exp, &fit.theta, streams, m as u64).map_err(at("evaluation"))?;
        result.records.push(RolloutRecord {
            m,
            n_m,
            cum_n,
            n_train: train.len(),
            lambda,
            alpha: cfg.alpha,
            theta: fit.theta.clone(),
            test_loss,
            test_loss_stderr,
            excess_risk: exp.optimal_risk.map(|l| test_loss - l),
            objective_start,
            objective_end: fit.value,
            iterations: fit.trace.accepted_steps(),
            termination: fit.termination,
        });
        theta = fit.theta;
    }
    if exp.optimal_risk.is_some() {
        let excess: Vec<f64> = result.records.iter().filter_map(|r| r.excess_risk).collect();
        result.regret = Some(expected_regret(&excess, &schedule).map_err(at("regret"))?);
    }
    Ok(())
}

pub fn run_scrm(exp: &Experiment, seed: u64) -> core::result::Result<RunResult, RunError> {
    run(Method::Scrm, exp, seed)
}

pub fn run_crm(exp: &Experiment, seed: u64) -> core::result::Result<RunResult, RunError> {
    run(Method::Crm, exp, seed)
}

/// Running partial sums of `Delta_m n_{m+1}`.
pub fn partial_regret(records: &[RolloutRecord], schedule: &[usize]) -> Vec<Option<f64>> {
    let mut acc = Some(0.0);
    records
        .iter()
        .enumerate()
        .map(|(m, r)| {
            let next = schedule.get(m + 1).copied().unwrap_or(2 * schedule[m]) as f64;
            acc = match (acc, r.excess_risk) {
                (Some(a), Some(d)) => Some(a + d * next),
                _ => None,
            };
            acc
        })
        .collect()
}

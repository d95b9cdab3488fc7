//! Projected gradient descent over `||theta|| <= K`: Barzilai-Borwein trial
//! steps with Armijo backtracking.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::Interaction;
use crate::error::{invalid, Error, Result};
use crate::numeric::norm;
use crate::objective::{svp_objective, svp_value_and_gradient, ObjectiveConfig};
use crate::policy::{ModelParams, PolicySpec};

/// Trial steps below this are treated as step underflow.
pub const MIN_STEP: f64 = 1e-20;
/// Trial steps never exceed `step_init * MAX_STEP_GROWTH`.
pub const MAX_STEP_GROWTH: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub radius: f64,
    pub max_iters: usize,
    pub step_init: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub grad_tol: f64,
    /// Extra random starting points drawn uniformly in the ball.
    pub restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            radius: 10.0,
            max_iters: 1000,
            step_init: 1.0,
            armijo_c: 1e-4,
            shrink: 0.5,
            grad_tol: 1e-6,
            restarts: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(invalid("optimizer radius must be finite and > 0"));
        }
        if self.max_iters == 0 {
            return Err(invalid("optimizer max_iters must be >= 1"));
        }
        if !(self.step_init > 0.0) || !self.step_init.is_finite() {
            return Err(invalid("optimizer step_init must be finite and > 0"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(invalid("optimizer armijo_c must lie in (0, 1)"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(invalid("optimizer shrink must lie in (0, 1)"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(invalid("optimizer grad_tol must be > 0"));
        }
        Ok(())
    }
}

pub fn project_to_ball(theta: &[f64], radius: f64) -> Vec<f64> {
    let r = norm(theta);
    if r <= radius {
        theta.to_vec()
    } else {
        let s = radius / r;
        theta.iter().map(|t| t * s).collect()
    }
}

/// A differentiable scalar function of the model parameters.
pub trait Objective {
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// The variance-penalized objective on a fixed sample.
#[derive(Debug, Clone, Copy)]
pub struct SvpObjective<'a> {
    pub data: &'a [Interaction],
    pub spec: &'a PolicySpec,
    pub config: &'a ObjectiveConfig,
}

impl Objective for SvpObjective<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        svp_objective(self.data, self.spec, &ModelParams::new(theta.to_vec())?, self.config)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        svp_value_and_gradient(self.data, self.spec, &ModelParams::new(theta.to_vec())?, self.config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIters,
    StepUnderflow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub value: f64,
    /// Norm of the projected gradient step `theta - P(theta - g)`.
    pub grad_norm: f64,
    /// Step length that produced this iterate (0 for the start point).
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn accepted_steps(&self) -> usize {
        self.entries.len().saturating_sub(1)
    }

    pub fn final_value(&self) -> Option<f64> {
        self.entries.last().map(|e| e.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub theta: ModelParams,
    pub value: f64,
    pub termination: Termination,
    pub trace: Trace,
    /// Index of the winning start point (0 = the supplied initial point).
    pub start_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeError {
    pub error: Error,
    pub trace: Trace,
}

impl fmt::Display for OptimizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} accepted steps)", self.error, self.trace.accepted_steps())
    }
}

impl core::error::Error for OptimizeError {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<OptimizeError> for Error {
    fn from(e: OptimizeError) -> Self {
        e.error
    }
}

fn fail(error: Error, trace: &Trace) -> OptimizeError {
    OptimizeError {
        error,
        trace: trace.clone(),
    }
}

fn projected_step_norm(theta: &[f64], grad: &[f64], radius: f64) -> f64 {
    let moved: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - g).collect();
    let p = project_to_ball(&moved, radius);
    let d: Vec<f64> = theta.iter().zip(&p).map(|(t, q)| t - q).collect();
    norm(&d)
}

/// Minimize from a single starting point, which must lie in the ball.
pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    theta_init: &[f64],
    cfg: &OptimizerConfig,
) -> core::result::Result<Minimum, OptimizeError> {
    let mut trace = Trace::default();
    cfg.validate().map_err(|e| fail(e, &trace))?;
    if norm(theta_init) > cfg.radius * (1.0 + 1e-12) {
        return Err(fail(invalid("initial parameters lie outside the optimizer ball"), &trace));
    }
    let mut theta = theta_init.to_vec();
    let (mut value, mut grad) = objective.value_and_gradient(&theta).map_err(|e| fail(e, &trace))?;
    if !value.is_finite() {
        return Err(fail(Error::NonFinite("objective value"), &trace));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(fail(Error::NonFinite("objective gradient"), &trace));
    }
    let mut pg = projected_step_norm(&theta, &grad, cfg.radius);
    trace.entries.push(TraceEntry {
        value,
        grad_norm: pg,
        step: 0.0,
    });
    let max_step = cfg.step_init * MAX_STEP_GROWTH;
    let mut step = cfg.step_init;
    let mut termination = Termination::MaxIters;
    for _ in 0..cfg.max_iters {
        if pg <= cfg.grad_tol {
            termination = Termination::Converged;
            break;
        }
        let accepted = loop {
            if step < MIN_STEP {
                break None;
            }
            let moved: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let cand = project_to_ball(&moved, cfg.radius);
            let decrease: f64 = cand.iter().zip(&theta).zip(&grad).map(|((c, t), g)| g * (c - t)).sum();
            if decrease >= 0.0 {
                // the projected step no longer moves in a descent direction
                break None;
            }
            let cv = objective.value(&cand).map_err(|e| fail(e, &trace))?;
            if cv.is_finite() && cv <= value + cfg.armijo_c * decrease {
                break Some(cand);
            }
            step *= cfg.shrink;
        };
        let Some(cand) = accepted else {
            termination = Termination::StepUnderflow;
            break;
        };
        let (v, g) = objective.value_and_gradient(&cand).map_err(|e| fail(e, &trace))?;
        if !v.is_finite() {
            return Err(fail(Error::NonFinite("objective value"), &trace));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(fail(Error::NonFinite("objective gradient"), &trace));
        }
        // next trial: Barzilai-Borwein step s's / s'y, or plain growth without positive curvature
        let (ss, sy) = cand
            .iter()
            .zip(&theta)
            .zip(g.iter().zip(&grad))
            .fold((0.0, 0.0), |(ss, sy), ((c, t), (gn, go))| {
                let d = c - t;
                (ss + d * d, sy + d * (gn - go))
            });
        let accepted_step = step;
        step = if sy > 0.0 && ss > 0.0 { ss / sy } else { step / cfg.shrink };
        step = step.clamp(MIN_STEP, max_step);
        theta = cand;
        value = v;
        grad = g;
        pg = projected_step_norm(&theta, &grad, cfg.radius);
        trace.entries.push(TraceEntry {
            value,
            grad_norm: pg,
            step: accepted_step,
        });
    }
    if termination == Termination::MaxIters && pg <= cfg.grad_tol {
        termination = Termination::Converged;
    }
    Ok(Minimum {
        theta: ModelParams::new(theta).map_err(|e| fail(e, &trace))?,
        value,
        termination,
        trace,
        start_index: 0,
    })
}

/// A point drawn uniformly from the ball of the given radius.
pub fn uniform_in_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let r = norm(&dir);
    let u: f64 = rng.random();
    let scale = radius * libm::pow(u, 1.0 / dim as f64) / r;
    dir.into_iter().map(|d| d * scale).collect()
}

/// Minimize from `theta_init` and from `cfg.restarts` uniform points in the
/// ball; the lowest final objective wins, ties going to the lowest index.
pub fn minimize_with_restarts<O: Objective + ?Sized, R: Rng + ?Sized>(
    objective: &O,
    theta_init: &[f64],
    cfg: &OptimizerConfig,
    rng: &mut R,
) -> core::result::Result<Minimum, OptimizeError> {
    let mut best = minimize(objective, theta_init, cfg)?;
    for index in 1..=cfg.restarts {
        let start = uniform_in_ball(theta_init.len(), cfg.radius, rng);
        let mut m = minimize(objective, &start, cfg)?;
        if m.value < best.value {
            m.start_index = index;
            best = m;
        }
    }
    Ok(best)
}

/// Minimize the variance-penalized objective on one sample.
pub fn minimize_objective<R: Rng + ?Sized>(
    data: &[Interaction],
    spec: &PolicySpec,
    theta_init: &ModelParams,
    obj_cfg: &ObjectiveConfig,
    opt_cfg: &OptimizerConfig,
    rng: &mut R,
) -> core::result::Result<Minimum, OptimizeError> {
    if data.len() < 2 {
        return Err(fail(
            Error::InsufficientSamples {
                needed: 2,
                got: data.len(),
            },
            &Trace::default(),
        ));
    }
    let objective = SvpObjective {
        data,
        spec,
        config: obj_cfg,
    };
    minimize_with_restarts(&objective, theta_init.as_slice(), opt_cfg, rng)
}

//! Sample-variance-penalized learning objective.
//!
//! `L_m(theta) = L_ix(theta) + lambda * sqrt(V_ix(theta) / n)` where `L_ix` is
//! the implicit-exploration risk estimate and `V_ix` the sample variance of
//! the control-variate terms `zeta_i = (w_ix,i - 1) y_i`.

use alloc::vec;
use alloc::vec::Vec;

use crate::env::Interaction;
use crate::error::{invalid, Error, Result};
use crate::estimators::log_target_ratio;
use crate::numeric::{mean, pairwise_sum};
use crate::policy::{accumulate_score, ModelParams, PolicySpec};

/// Default confidence level `delta`.
pub const DEFAULT_DELTA: f64 = 0.05;

/// Penalty grid used for a-posteriori sweeps.
pub const LAMBDA_GRID: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub delta: f64,
    /// Dimension `d` in the complexity surrogate `d log n`.
    pub complexity_dim: usize,
}

impl ObjectiveConfig {
    pub fn new(lambda: f64, alpha: f64, complexity_dim: usize) -> Self {
        Self {
            lambda,
            alpha,
            delta: DEFAULT_DELTA,
            complexity_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid("objective lambda must be finite and >= 0"));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(invalid("objective alpha must be finite and >= 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("objective delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// `sqrt(18 (d log n + log(2 / delta)))`.
pub fn lambda_theoretical(n: usize, d: usize, delta: f64) -> f64 {
    libm::sqrt(18.0 * (d as f64 * libm::log(n as f64) + libm::log(2.0 / delta)))
}

/// Per-sample quantities shared by the value and the gradient.
struct Terms {
    /// IPS-IX weights `w / (1 + alpha w)`.
    ix: Vec<f64>,
    /// Control-variate terms `(w_ix - 1) y`.
    zeta: Vec<f64>,
    estimate: f64,
    variance: f64,
}

fn terms(data: &[Interaction], spec: &PolicySpec, theta: &ModelParams, alpha: f64) -> Result<Terms> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mut ix = Vec::with_capacity(n);
    let mut weighted = Vec::with_capacity(n);
    let mut zeta = Vec::with_capacity(n);
    for it in data {
        let w = libm::exp(log_target_ratio(spec, theta, it)?);
        let wix = w / (1.0 + alpha * w);
        ix.push(wix);
        weighted.push(it.y * wix);
        zeta.push((wix - 1.0) * it.y);
    }
    let zbar = mean(&zeta);
    let sq: Vec<f64> = zeta.iter().map(|z| (z - zbar) * (z - zbar)).collect();
    Ok(Terms {
        estimate: mean(&weighted),
        variance: pairwise_sum(&sq) / (n - 1) as f64,
        ix,
        zeta,
    })
}

/// The objective value `L_ix + lambda sqrt(V_ix / n)`.
pub fn svp_objective(data: &[Interaction], spec: &PolicySpec, theta: &ModelParams, cfg: &ObjectiveConfig) -> Result<f64> {
    cfg.validate()?;
    let t = terms(data, spec, theta, cfg.alpha)?;
    Ok(t.estimate + cfg.lambda * libm::sqrt(t.variance / data.len() as f64))
}

/// Objective value and its exact gradient.
///
/// Each weight derivative is `d w_ix / d theta = w / (1 + alpha w)^2 *
/// grad log pi_theta`. At `V_ix = 0` the penalty contributes a zero
/// subgradient.
pub fn svp_value_and_gradient(
    data: &[Interaction],
    spec: &PolicySpec,
    theta: &ModelParams,
    cfg: &ObjectiveConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let n = data.len();
    let t = terms(data, spec, theta, cfg.alpha)?;
    let nf = n as f64;
    let penalty = cfg.lambda * libm::sqrt(t.variance / nf);
    // d penalty / d V = lambda / (2 sqrt(n V)); d V / d zeta_i = 2 (zeta_i - zbar) / (n - 1)
    let penalty_scale = if t.variance > 0.0 && cfg.lambda > 0.0 {
        cfg.lambda / (2.0 * libm::sqrt(nf * t.variance)) * 2.0 / (nf - 1.0)
    } else {
        0.0
    };
    let zbar = mean(&t.zeta);
    let mut grad = vec![0.0; theta.dim()];
    for (i, it) in data.iter().enumerate() {
        let wix = t.ix[i];
        // w / (1 + alpha w)^2 = wix^2 / w = wix (1 - alpha wix)
        let dw = wix * (1.0 - cfg.alpha * wix);
        let coeff = it.y * dw * (1.0 / nf + penalty_scale * (t.zeta[i] - zbar));
        if coeff != 0.0 {
            accumulate_score(spec, theta, &it.x, &it.a, coeff, &mut grad)?;
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("objective gradient"));
    }
    Ok((t.estimate + penalty, grad))
}

pub fn svp_gradient(data: &[Interaction], spec: &PolicySpec, theta: &ModelParams, cfg: &ObjectiveConfig) -> Result<Vec<f64>> {
    svp_value_and_gradient(data, spec, theta, cfg).map(|(_, g)| g)
}

/// Terms of the high-probability upper bound on `L(theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub estimate: f64,
    /// `lambda sqrt(V / n)`.
    pub penalty: f64,
    /// `2 lambda^2 W / n`.
    pub weight_term: f64,
    /// `sqrt(log(2 / delta) / (2 n))`.
    pub confidence_term: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.estimate + self.penalty + self.weight_term + self.confidence_term
    }
}

/// Right-hand side of the generalization bound for the configured `lambda`,
/// using the policy's declared weight bound `W`.
pub fn generalization_bound_rhs(
    data: &[Interaction],
    spec: &PolicySpec,
    theta: &ModelParams,
    cfg: &ObjectiveConfig,
) -> Result<BoundTerms> {
    cfg.validate()?;
    let t = terms(data, spec, theta, cfg.alpha)?;
    let n = data.len() as f64;
    Ok(BoundTerms {
        estimate: t.estimate,
        penalty: cfg.lambda * libm::sqrt(t.variance / n),
        weight_term: 2.0 * cfg.lambda * cfg.lambda * spec.weight_bound / n,
        confidence_term: libm::sqrt(libm::log(2.0 / cfg.delta) / (2.0 * n)),
    })
}

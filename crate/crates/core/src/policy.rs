//! Parametric stochastic policies.
//!
//! Three families share one parameter vector `theta` and a linear feature map
//! `phi(x) = x` (optionally followed by a constant intercept feature):
//!
//! * `GaussianLinear`: `a ~ N(theta . phi(x), sigma^2)`.
//! * `Lognormal`: `log a ~ N(theta . phi(x), sigma^2)`, i.e. `theta` drives the
//!   log-space mean `eta` with a fixed log-space `sigma`.
//! * `SoftmaxKronecker`: actions are `K`-bit vectors, logits are
//!   `theta . (phi(x) ⊗ a)` and the result is mixed with the uniform
//!   distribution, `pi_eps = (1 - eps) pi + eps / 2^K`.
//!
//! All densities are evaluated in log space and importance weights are formed
//! as `exp(log p_num - log p_den)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::numeric::{dot, log_add_exp, norm, sigmoid, softplus};

/// Smallest density accepted in the denominator of an importance weight.
pub const MIN_DENSITY: f64 = 1e-300;

/// Largest supported number of action bits for the discrete family.
pub const MAX_ACTION_BITS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    GaussianLinear,
    Lognormal,
    SoftmaxKronecker,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::GaussianLinear => "gaussian_linear",
            Family::Lognormal => "lognormal",
            Family::SoftmaxKronecker => "softmax_kronecker",
        }
    }
}

/// A policy family together with its fixed hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub family: Family,
    /// Standard deviation (log-space for the lognormal family).
    pub sigma: f64,
    /// Uniform mixing mass of the discrete family.
    pub epsilon: f64,
    /// Number of bits `K` of a discrete action.
    pub action_bits: usize,
    /// Declared bound `W` on importance weights. Exceeding it is reported,
    /// never truncated.
    pub weight_bound: f64,
    /// Append a constant `1` feature to every context.
    pub intercept: bool,
}

pub const DEFAULT_WEIGHT_BOUND: f64 = 100.0;

impl PolicySpec {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            family: Family::GaussianLinear,
            sigma,
            epsilon: 0.0,
            action_bits: 0,
            weight_bound: DEFAULT_WEIGHT_BOUND,
            intercept: false,
        }
    }

    pub fn lognormal(sigma: f64) -> Self {
        Self {
            family: Family::Lognormal,
            ..Self::gaussian(sigma)
        }
    }

    pub fn softmax_kronecker(action_bits: usize, epsilon: f64) -> Self {
        Self {
            family: Family::SoftmaxKronecker,
            sigma: 1.0,
            epsilon,
            action_bits,
            weight_bound: DEFAULT_WEIGHT_BOUND,
            intercept: false,
        }
    }

    pub fn with_intercept(mut self, intercept: bool) -> Self {
        self.intercept = intercept;
        self
    }

    pub fn with_weight_bound(mut self, w: f64) -> Self {
        self.weight_bound = w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight_bound >= 1.0) || !self.weight_bound.is_finite() {
            return Err(invalid("policy weight bound W must be a finite value >= 1"));
        }
        match self.family {
            Family::GaussianLinear | Family::Lognormal => {
                if !(self.sigma > 0.0) || !self.sigma.is_finite() {
                    return Err(invalid("policy sigma must be positive and finite"));
                }
            }
            Family::SoftmaxKronecker => {
                if self.action_bits == 0 || self.action_bits > MAX_ACTION_BITS {
                    return Err(invalid("policy action_bits must be in 1..=24"));
                }
                // epsilon = 1 is the degenerate uniform policy; allowed for sampling checks.
                if !(0.0..=1.0).contains(&self.epsilon) {
                    return Err(invalid("policy epsilon must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Length of `phi(x)` for a context of length `context_len`.
    pub fn feature_dim(&self, context_len: usize) -> usize {
        context_len + usize::from(self.intercept)
    }

    /// Dimension of `theta` for a context of length `context_len`.
    pub fn param_dim(&self, context_len: usize) -> usize {
        match self.family {
            Family::SoftmaxKronecker => self.feature_dim(context_len) * self.action_bits,
            _ => self.feature_dim(context_len),
        }
    }

    pub fn num_actions(&self) -> usize {
        1usize << self.action_bits
    }
}

/// Parameter vector of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameter"));
        }
        Ok(Self(theta))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

/// An action: a real number for the continuous families, a `K`-bit mask for
/// the discrete family (bit `j` is label `j`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Continuous(f64),
    Discrete(u32),
}

impl Action {
    pub fn bit(&self, j: usize) -> bool {
        match self {
            Action::Discrete(mask) => (mask >> j) & 1 == 1,
            Action::Continuous(_) => false,
        }
    }
}

/// Importance weight `pi_num / pi_den` at one `(x, a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceWeight {
    pub value: f64,
    pub log_value: f64,
    /// Set when `value` exceeds the declared bound `W`.
    pub exceeds_bound: bool,
}

fn check_dims(spec: &PolicySpec, theta: &ModelParams, x: &[f64]) -> Result<()> {
    let expected = spec.param_dim(x.len());
    if theta.dim() != expected {
        return Err(Error::DimensionMismatch {
            what: "theta",
            expected,
            got: theta.dim(),
        });
    }
    Ok(())
}

/// `theta_block . phi(x)` where `phi` appends the optional intercept.
fn linear_score(block: &[f64], x: &[f64], intercept: bool) -> f64 {
    let s = dot(&block[..x.len()], x);
    if intercept {
        s + block[x.len()]
    } else {
        s
    }
}

fn add_scaled_features(out: &mut [f64], x: &[f64], intercept: bool, scale: f64) {
    for (o, xi) in out.iter_mut().zip(x) {
        *o += scale * xi;
    }
    if intercept {
        out[x.len()] += scale;
    }
}

/// Per-bit logits `s_j = theta_j . phi(x)`.
fn bit_logits(spec: &PolicySpec, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let p = spec.feature_dim(x.len());
    (0..spec.action_bits)
        .map(|j| linear_score(&theta[j * p..(j + 1) * p], x, spec.intercept))
        .collect()
}

/// Log mass of the un-mixed Kronecker softmax. With bit-vector actions the
/// softmax over `2^K` actions factorizes into independent per-bit logistic
/// terms: `log pi(a) = sum_j (a_j s_j - log(1 + e^{s_j}))`.
fn softmax_log_mass(logits: &[f64], mask: u32) -> f64 {
    logits
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            if (mask >> j) & 1 == 1 {
                s - softplus(s)
            } else {
                -softplus(s)
            }
        })
        .sum()
}

fn mixed_log_mass(spec: &PolicySpec, base: f64) -> f64 {
    let eps = spec.epsilon;
    if eps == 0.0 {
        return base;
    }
    let uniform = libm::log(eps) - spec.action_bits as f64 * core::f64::consts::LN_2;
    if eps >= 1.0 {
        return uniform;
    }
    log_add_exp(libm::log1p(-eps) + base, uniform)
}

fn check_discrete(spec: &PolicySpec, a: &Action) -> Result<u32> {
    match *a {
        Action::Discrete(mask) if (mask as u64) < (1u64 << spec.action_bits) => Ok(mask),
        Action::Discrete(_) => Err(Error::DimensionMismatch {
            what: "action bits",
            expected: spec.action_bits,
            got: 32,
        }),
        Action::Continuous(_) => Err(Error::ActionMismatch(spec.family.name())),
    }
}

fn check_continuous(spec: &PolicySpec, a: &Action) -> Result<f64> {
    match *a {
        Action::Continuous(v) => Ok(v),
        Action::Discrete(_) => Err(Error::ActionMismatch(spec.family.name())),
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn gaussian_log_pdf(v: f64, mean: f64, sigma: f64) -> f64 {
    let z = (v - mean) / sigma;
    -0.5 * z * z - libm::log(sigma) - HALF_LN_2PI
}

/// Log density (continuous) or log mass (discrete) of `a` given `x`.
pub fn log_density(spec: &PolicySpec, theta: &ModelParams, x: &[f64], a: &Action) -> Result<f64> {
    check_dims(spec, theta, x)?;
    let th = theta.as_slice();
    match spec.family {
        Family::GaussianLinear => {
            let v = check_continuous(spec, a)?;
            Ok(gaussian_log_pdf(v, linear_score(th, x, spec.intercept), spec.sigma))
        }
        Family::Lognormal => {
            let v = check_continuous(spec, a)?;
            if !(v > 0.0) {
                return Err(Error::OutOfSupport(v));
            }
            let ln_v = libm::log(v);
            Ok(gaussian_log_pdf(ln_v, linear_score(th, x, spec.intercept), spec.sigma) - ln_v)
        }
        Family::SoftmaxKronecker => {
            let mask = check_discrete(spec, a)?;
            let logits = bit_logits(spec, th, x);
            Ok(mixed_log_mass(spec, softmax_log_mass(&logits, mask)))
        }
    }
}

pub fn density(spec: &PolicySpec, theta: &ModelParams, x: &[f64], a: &Action) -> Result<f64> {
    log_density(spec, theta, x, a).map(libm::exp)
}

/// Maps a standard-normal draw to an action of a continuous family. This is
/// the reparameterization used both by [`sample_action`] and by sample-average
/// risk minimization.
pub fn action_from_noise(spec: &PolicySpec, theta: &ModelParams, x: &[f64], z: f64) -> Result<Action> {
    check_dims(spec, theta, x)?;
    let mean = linear_score(theta.as_slice(), x, spec.intercept);
    match spec.family {
        Family::GaussianLinear => Ok(Action::Continuous(mean + spec.sigma * z)),
        Family::Lognormal => Ok(Action::Continuous(libm::exp(mean + spec.sigma * z))),
        Family::SoftmaxKronecker => Err(Error::ActionMismatch(spec.family.name())),
    }
}

/// Draws an action and returns it with its propensity, computed by
/// [`log_density`].
pub fn sample_action<R: Rng + ?Sized>(
    spec: &PolicySpec,
    theta: &ModelParams,
    x: &[f64],
    rng: &mut R,
) -> Result<(Action, f64)> {
    check_dims(spec, theta, x)?;
    let action = match spec.family {
        Family::GaussianLinear | Family::Lognormal => {
            let z: f64 = StandardNormal.sample(rng);
            action_from_noise(spec, theta, x, z)?
        }
        Family::SoftmaxKronecker => {
            let explore: f64 = rng.random();
            if explore < spec.epsilon {
                Action::Discrete(rng.random_range(0..(1u64 << spec.action_bits)) as u32)
            } else {
                let logits = bit_logits(spec, theta.as_slice(), x);
                let mut mask = 0u32;
                for (j, s) in logits.iter().enumerate() {
                    let u: f64 = rng.random();
                    if u < sigmoid(*s) {
                        mask |= 1 << j;
                    }
                }
                Action::Discrete(mask)
            }
        }
    };
    let propensity = density(spec, theta, x, &action)?;
    Ok((action, propensity))
}

/// Adds `scale * grad_theta log pi_theta(a | x)` into `out` and returns
/// `log pi_theta(a | x)`.
pub fn accumulate_score(
    spec: &PolicySpec,
    theta: &ModelParams,
    x: &[f64],
    a: &Action,
    scale: f64,
    out: &mut [f64],
) -> Result<f64> {
    check_dims(spec, theta, x)?;
    if out.len() != theta.dim() {
        return Err(Error::DimensionMismatch {
            what: "gradient buffer",
            expected: theta.dim(),
            got: out.len(),
        });
    }
    let th = theta.as_slice();
    let sigma2 = spec.sigma * spec.sigma;
    match spec.family {
        Family::GaussianLinear => {
            let v = check_continuous(spec, a)?;
            let mean = linear_score(th, x, spec.intercept);
            add_scaled_features(out, x, spec.intercept, scale * (v - mean) / sigma2);
            Ok(gaussian_log_pdf(v, mean, spec.sigma))
        }
        Family::Lognormal => {
            let v = check_continuous(spec, a)?;
            if !(v > 0.0) {
                return Err(Error::OutOfSupport(v));
            }
            let ln_v = libm::log(v);
            let eta = linear_score(th, x, spec.intercept);
            add_scaled_features(out, x, spec.intercept, scale * (ln_v - eta) / sigma2);
            Ok(gaussian_log_pdf(ln_v, eta, spec.sigma) - ln_v)
        }
        Family::SoftmaxKronecker => {
            let mask = check_discrete(spec, a)?;
            let logits = bit_logits(spec, th, x);
            let base = softmax_log_mass(&logits, mask);
            let mixed = mixed_log_mass(spec, base);
            // grad log pi_eps = (1 - eps) pi / pi_eps * grad log pi
            let shrink = if spec.epsilon == 0.0 {
                1.0
            } else if spec.epsilon >= 1.0 {
                0.0
            } else {
                libm::exp(libm::log1p(-spec.epsilon) + base - mixed)
            };
            let p = spec.feature_dim(x.len());
            for (j, s) in logits.iter().enumerate() {
                let bit = if (mask >> j) & 1 == 1 { 1.0 } else { 0.0 };
                let coeff = scale * shrink * (bit - sigmoid(*s));
                add_scaled_features(&mut out[j * p..(j + 1) * p], x, spec.intercept, coeff);
            }
            Ok(mixed)
        }
    }
}

/// Score function `grad_theta log pi_theta(a | x)`.
pub fn grad_log_density(spec: &PolicySpec, theta: &ModelParams, x: &[f64], a: &Action) -> Result<Vec<f64>> {
    let mut out = vec![0.0; theta.dim()];
    accumulate_score(spec, theta, x, a, 1.0, &mut out)?;
    Ok(out)
}

/// `pi_num(a | x) / pi_den(a | x)`.
pub fn importance_weight(
    spec: &PolicySpec,
    theta_num: &ModelParams,
    theta_den: &ModelParams,
    x: &[f64],
    a: &Action,
) -> Result<ImportanceWeight> {
    let log_den = log_density(spec, theta_den, x, a)?;
    if log_den < libm::log(MIN_DENSITY) {
        return Err(Error::PropensityUnderflow(libm::exp(log_den)));
    }
    let log_num = log_density(spec, theta_num, x, a)?;
    let log_value = log_num - log_den;
    let value = libm::exp(log_value);
    let exceeds_bound = value > spec.weight_bound;
    if exceeds_bound {
        log::warn!(
            "importance weight {value:.4e} exceeds the declared bound W = {}",
            spec.weight_bound
        );
    }
    Ok(ImportanceWeight {
        value,
        log_value,
        exceeds_bound,
    })
}

/// Enumerates all `2^K` actions of the discrete family with their masses.
pub fn action_masses(spec: &PolicySpec, theta: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    if spec.family != Family::SoftmaxKronecker {
        return Err(Error::ActionMismatch(spec.family.name()));
    }
    (0..spec.num_actions() as u32)
        .map(|m| density(spec, theta, x, &Action::Discrete(m)))
        .collect()
}

/// Density of `N(mean, sigma^2)` at `v`; used by closed-form checks.
pub fn gaussian_pdf(v: f64, mean: f64, sigma: f64) -> f64 {
    let z = (v - mean) / sigma;
    libm::exp(-0.5 * z * z) / (sigma * libm::sqrt(2.0 * PI))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(v: &[f64]) -> ModelParams {
        ModelParams::new(v.to_vec()).unwrap()
    }

    #[test]
    fn standard_normal_at_mean() {
        let spec = PolicySpec::gaussian(1.0);
        let lp = log_density(&spec, &p(&[0.0, 0.0]), &[0.3, -2.0], &Action::Continuous(0.0)).unwrap();
        assert!((lp - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn zero_logits_are_uniform() {
        let spec = PolicySpec::softmax_kronecker(2, 0.0);
        let theta = ModelParams::zeros(spec.param_dim(3));
        for m in 0..4 {
            let lp = log_density(&spec, &theta, &[1.0, 2.0, 3.0], &Action::Discrete(m)).unwrap();
            assert!((lp + 4f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn gaussian_density_matches_pdf_formula() {
        let spec = PolicySpec::gaussian(0.5);
        let d = density(&spec, &p(&[1.0]), &[2.0], &Action::Continuous(2.5)).unwrap();
        // N(2, 0.25) at 2.5: z = 1
        let expected = (-0.5f64).exp() / (0.5 * (2.0 * PI).sqrt());
        assert!((d - expected).abs() < 1e-14);
    }

    #[test]
    fn score_examples() {
        let spec = PolicySpec::gaussian(1.0);
        let g = grad_log_density(&spec, &p(&[0.0]), &[2.0], &Action::Continuous(1.0)).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-15);
        let g = grad_log_density(&spec, &p(&[0.7, -0.2]), &[1.0, 2.0], &Action::Continuous(0.3)).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn identical_parameters_give_unit_weight() {
        let spec = PolicySpec::lognormal(0.4).with_intercept(true);
        let th = p(&[0.2, 0.1]);
        let w = importance_weight(&spec, &th, &th, &[1.5], &Action::Continuous(2.0)).unwrap();
        assert_eq!(w.value, 1.0);
        assert!(!w.exceeds_bound);
    }

    #[test]
    fn weight_log_ratio_example() {
        // theta_num = 1, theta_den = 0, sigma = 1, a = 0.5: exp(-(0.25)/2 + 0.25/2) = 1
        let spec = PolicySpec::gaussian(1.0).with_intercept(true);
        let w = importance_weight(&spec, &p(&[1.0]), &p(&[0.0]), &[], &Action::Continuous(0.5)).unwrap();
        assert!((w.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weight_bound_violation_is_flagged_not_truncated() {
        let spec = PolicySpec::gaussian(0.1).with_intercept(true).with_weight_bound(2.0);
        let w = importance_weight(&spec, &p(&[1.0]), &p(&[0.0]), &[], &Action::Continuous(1.0)).unwrap();
        assert!(w.exceeds_bound);
        assert!((w.log_value - 50.0).abs() < 1e-9);
    }

    #[test]
    fn denominator_underflow_is_an_error() {
        let spec = PolicySpec::gaussian(0.01).with_intercept(true);
        let err = importance_weight(&spec, &p(&[0.0]), &p(&[0.0]), &[], &Action::Continuous(1.0)).unwrap_err();
        assert!(matches!(err, Error::PropensityUnderflow(_)));
    }

    #[test]
    fn dimension_and_variant_errors() {
        let spec = PolicySpec::gaussian(1.0);
        assert!(matches!(
            log_density(&spec, &p(&[1.0, 2.0]), &[1.0], &Action::Continuous(0.0)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            log_density(&spec, &p(&[1.0]), &[1.0], &Action::Discrete(1)),
            Err(Error::ActionMismatch(_))
        ));
        let disc = PolicySpec::softmax_kronecker(2, 0.1);
        assert!(log_density(&disc, &ModelParams::zeros(2), &[1.0], &Action::Discrete(4)).is_err());
        let logn = PolicySpec::lognormal(1.0);
        assert!(matches!(
            log_density(&logn, &p(&[0.0]), &[1.0], &Action::Continuous(-1.0)),
            Err(Error::OutOfSupport(_))
        ));
    }

    #[test]
    fn near_degenerate_gaussian_samples_at_mean() {
        let spec = PolicySpec::gaussian(1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (a, prop) = sample_action(&spec, &p(&[0.5, -1.0]), &[2.0, 0.25], &mut rng).unwrap();
            let Action::Continuous(v) = a else { panic!() };
            assert!((v - 0.75).abs() < 1e-6);
            assert!(prop > 0.0);
        }
    }

    #[test]
    fn propensity_equals_density() {
        let spec = PolicySpec::softmax_kronecker(3, 0.2).with_intercept(true);
        let theta = p(&[0.3, -0.1, 1.0, 0.5, -0.7, 0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (a, prop) = sample_action(&spec, &theta, &[0.9], &mut rng).unwrap();
            assert_eq!(prop, density(&spec, &theta, &[0.9], &a).unwrap());
        }
    }

    #[test]
    fn validation() {
        assert!(PolicySpec::gaussian(0.0).validate().is_err());
        assert!(PolicySpec::gaussian(1.0).with_weight_bound(0.5).validate().is_err());
        assert!(PolicySpec::softmax_kronecker(0, 0.1).validate().is_err());
        assert!(PolicySpec::softmax_kronecker(3, -0.1).validate().is_err());
        assert!(PolicySpec::softmax_kronecker(3, 0.1).validate().is_ok());
        assert!(ModelParams::new(alloc::vec![f64::NAN]).is_err());
    }
}

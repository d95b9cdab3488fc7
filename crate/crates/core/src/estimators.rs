//! Off-policy risk and variance estimators.
//!
//! The batch-level functions turn logged interactions into per-sample
//! `(loss, weight)` pairs and delegate to the slice kernels in [`weighted`],
//! which are also usable directly on losses outside `[-1, 0]`.

use alloc::vec::Vec;

use crate::env::Interaction;
use crate::error::{invalid, Error, Result};
use crate::numeric::{log_sum_exp, mean, pairwise_sum};
use crate::policy::{log_density, Action, ModelParams, PolicySpec, MIN_DENSITY};

/// Logged data from one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub interactions: Vec<Interaction>,
    /// Parameters of the policy that logged the batch.
    pub behavior: ModelParams,
    pub rollout: usize,
}

impl Batch {
    pub fn new(interactions: Vec<Interaction>, behavior: ModelParams, rollout: usize) -> Result<Self> {
        if interactions.is_empty() {
            return Err(Error::Empty("batch"));
        }
        Ok(Self {
            interactions,
            behavior,
            rollout,
        })
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Checks that the first `count` logged propensities agree with the
    /// behavior parameters to relative tolerance `tol`.
    pub fn spot_check(&self, spec: &PolicySpec, count: usize, tol: f64) -> Result<bool> {
        for it in self.interactions.iter().take(count) {
            let p = libm::exp(log_density(spec, &self.behavior, &it.x, &it.a)?);
            if libm::fabs(p - it.propensity) > tol * it.propensity {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Sorts interactions by a canonical total order so that reductions over
    /// the batch do not depend on collection order.
    pub fn canonicalize(&mut self) {
        self.interactions.sort_by(canonical_order);
    }
}

fn action_key(a: &Action) -> (u8, u64) {
    match *a {
        Action::Continuous(v) => (0, v.to_bits()),
        Action::Discrete(m) => (1, m as u64),
    }
}

fn canonical_order(a: &Interaction, b: &Interaction) -> core::cmp::Ordering {
    a.propensity
        .total_cmp(&b.propensity)
        .then(a.y.total_cmp(&b.y))
        .then(action_key(&a.a).cmp(&action_key(&b.a)))
        .then_with(|| {
            a.x.iter()
                .zip(&b.x)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(a.x.len().cmp(&b.x.len()))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorVariant {
    Ips,
    ClippedIps,
    Snips,
    IpsIx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MisWeights {
    None,
    Naive,
    Balance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub variant: EstimatorVariant,
    /// Clipping level (clipped IPS) or smoothing level (IPS-IX).
    pub alpha: f64,
    pub mis_weights: MisWeights,
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(invalid("estimator alpha must be nonnegative"));
        }
        if self.variant == EstimatorVariant::ClippedIps && !(self.alpha > 0.0) {
            return Err(invalid("clipped IPS requires alpha > 0"));
        }
        Ok(())
    }

    /// Risk estimate of `theta` on a single batch.
    pub fn estimate(&self, data: &[Interaction], spec: &PolicySpec, theta: &ModelParams) -> Result<f64> {
        self.validate()?;
        match self.variant {
            EstimatorVariant::Ips => ips_estimate(data, spec, theta),
            EstimatorVariant::ClippedIps => clipped_ips_estimate(data, spec, theta, self.alpha),
            EstimatorVariant::Snips => snips_estimate(data, spec, theta),
            EstimatorVariant::IpsIx => ips_ix_estimate(data, spec, theta, self.alpha),
        }
    }
}

/// Slice kernels over losses `y` and importance weights `w`.
pub mod weighted {
    use super::*;

    fn terms(y: &[f64], w: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        y.iter().zip(w).map(|(&y, &w)| f(y, w)).collect()
    }

    pub fn ix_weight(w: f64, alpha: f64) -> f64 {
        w / (1.0 + alpha * w)
    }

    pub fn ips(y: &[f64], w: &[f64]) -> f64 {
        mean(&terms(y, w, |y, w| y * w))
    }

    pub fn clipped_ips(y: &[f64], w: &[f64], alpha: f64) -> f64 {
        mean(&terms(y, w, |y, w| y * w.min(alpha)))
    }

    pub fn snips(y: &[f64], w: &[f64]) -> Result<f64> {
        let total = pairwise_sum(w);
        if !(total > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        Ok(pairwise_sum(&terms(y, w, |y, w| y * w)) / total)
    }

    pub fn ips_ix(y: &[f64], w: &[f64], alpha: f64) -> f64 {
        mean(&terms(y, w, |y, w| y * ix_weight(w, alpha)))
    }

    /// Sample variance of the clipped terms `y * min(w, alpha)`.
    pub fn clipped_variance(y: &[f64], w: &[f64], alpha: f64) -> Result<f64> {
        variance_of(&terms(y, w, |y, w| y * w.min(alpha)))
    }

    /// Sample variance of the control-variate terms `(w_ix - 1) * y`.
    pub fn ix_variance(y: &[f64], w: &[f64], alpha: f64) -> Result<f64> {
        variance_of(&terms(y, w, |y, w| (ix_weight(w, alpha) - 1.0) * y))
    }

    pub(crate) fn variance_of(values: &[f64]) -> Result<f64> {
        if values.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: values.len(),
            });
        }
        Ok(crate::numeric::sample_variance(values))
    }

    /// `k`-th largest weight (the smallest weight when fewer than `k`
    /// samples are available). Used as the clipping level of clipped IPS.
    pub fn order_statistic_clip(w: &[f64], k: usize) -> Result<f64> {
        if w.is_empty() {
            return Err(Error::Empty("weights"));
        }
        let mut sorted = w.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        Ok(sorted[k.clamp(1, sorted.len()) - 1])
    }
}

/// Default order statistic used by the clipping heuristic.
pub const CLIP_ORDER_STATISTIC: usize = 5;

/// Losses and `pi_theta / pi_logged` weights of every interaction.
pub fn losses_and_weights(
    data: &[Interaction],
    spec: &PolicySpec,
    theta: &ModelParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut y = Vec::with_capacity(data.len());
    let mut w = Vec::with_capacity(data.len());
    for it in data {
        y.push(it.y);
        w.push(libm::exp(log_target_ratio(spec, theta, it)?));
    }
    Ok((y, w))
}

/// `log(pi_theta(a | x) / propensity)` for one interaction.
pub fn log_target_ratio(spec: &PolicySpec, theta: &ModelParams, it: &Interaction) -> Result<f64> {
    if !(it.propensity >= MIN_DENSITY) || !it.propensity.is_finite() {
        return Err(Error::PropensityUnderflow(it.propensity));
    }
    let lp = log_density(spec, theta, &it.x, &it.a)?;
    if libm::exp(lp) == it.propensity {
        // same density as the logged one: keep the ratio exactly 1
        return Ok(0.0);
    }
    Ok(lp - libm::log(it.propensity))
}

pub fn ips_estimate(data: &[Interaction], spec: &PolicySpec, theta: &ModelParams) -> Result<f64> {
    let (y, w) = losses_and_weights(data, spec, theta)?;
    Ok(weighted::ips(&y, &w))
}

pub fn clipped_ips_estimate(data: &[Interaction], spec: &PolicySpec, theta: &ModelParams, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(invalid("clipped IPS requires alpha > 0"));
    }
    let (y, w) = losses_and_weights(data, spec, theta)?;
    Ok(weighted::clipped_ips(&y, &w, alpha))
}

pub fn snips_estimate(data: &[Interaction], spec: &PolicySpec, theta: &ModelParams) -> Result<f64> {
    let (y, w) = losses_and_weights(data, spec, theta)?;
    weighted::snips(&y, &w)
}

/// Implicit-exploration estimate `(1/n) sum y_i pi_theta,i / (pi_i + alpha pi_theta,i)`.
pub fn ips_ix_estimate(data: &[Interaction], spec: &PolicySpec, theta: &ModelParams, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(invalid("IPS-IX requires alpha >= 0"));
    }
    let (y, w) = losses_and_weights(data, spec, theta)?;
    Ok(weighted::ips_ix(&y, &w, alpha))
}

pub fn empirical_variance_ips(data: &[Interaction], spec: &PolicySpec, theta: &ModelParams, alpha: f64) -> Result<f64> {
    let (y, w) = losses_and_weights(data, spec, theta)?;
    weighted::clipped_variance(&y, &w, alpha)
}

/// Sample variance of `zeta_i = (w_ix,i - 1) y_i`.
pub fn empirical_variance_ips_ix(
    data: &[Interaction],
    spec: &PolicySpec,
    theta: &ModelParams,
    alpha: f64,
) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(invalid("IPS-IX requires alpha >= 0"));
    }
    let (y, w) = losses_and_weights(data, spec, theta)?;
    weighted::ix_variance(&y, &w, alpha)
}

/// Multiple-importance-sampling weights `omega_t(a)` of one `(x, a)` across
/// batches. They sum to one for both heuristics.
pub fn mis_partition_weights(
    batches: &[Batch],
    spec: &PolicySpec,
    x: &[f64],
    a: &Action,
    weights: MisWeights,
) -> Result<Vec<f64>> {
    if batches.is_empty() {
        return Err(Error::Empty("batch list"));
    }
    let total: usize = batches.iter().map(Batch::len).sum();
    match weights {
        MisWeights::None | MisWeights::Naive => Ok(batches.iter().map(|b| b.len() as f64 / total as f64).collect()),
        MisWeights::Balance => {
            let logs = balance_logs(batches, spec, x, a)?;
            let norm = log_sum_exp(&logs);
            Ok(logs.iter().map(|l| libm::exp(l - norm)).collect())
        }
    }
}

/// `log(n_t pi_{theta_t}(a | x))` for every batch `t`.
fn balance_logs(batches: &[Batch], spec: &PolicySpec, x: &[f64], a: &Action) -> Result<Vec<f64>> {
    batches
        .iter()
        .map(|b| Ok(libm::log(b.len() as f64) + log_density(spec, &b.behavior, x, a)?))
        .collect()
}

/// Multiple-importance-sampling risk estimate over several batches.
///
/// `Naive` weights `omega_t = n_t / sum_l n_l` give the plain concatenation of
/// per-batch IPS estimates. `Balance` weights `omega_t ∝ n_t pi_{theta_t}(a)`
/// reduce each term to `y pi_theta / sum_l n_l pi_{theta_l}`.
pub fn mis_estimate(batches: &[Batch], spec: &PolicySpec, theta: &ModelParams, weights: MisWeights) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::Empty("batch list"));
    }
    let total: usize = batches.iter().map(Batch::len).sum();
    let mut terms = Vec::with_capacity(total);
    match weights {
        MisWeights::None | MisWeights::Naive => {
            for b in batches {
                for it in &b.interactions {
                    terms.push(it.y * libm::exp(log_target_ratio(spec, theta, it)?));
                }
            }
            Ok(pairwise_sum(&terms) / total as f64)
        }
        MisWeights::Balance => {
            for b in batches {
                for it in &b.interactions {
                    let denom = log_sum_exp(&balance_logs(batches, spec, &it.x, &it.a)?);
                    let lp = log_density(spec, theta, &it.x, &it.a)?;
                    terms.push(it.y * libm::exp(lp - denom));
                }
            }
            Ok(pairwise_sum(&terms))
        }
    }
}

/// `(1/n_p) sum_k (r^p_k - mean_p)(r^q_k - mean_q)` over aligned indices.
pub fn cross_covariance(rp: &[f64], rq: &[f64]) -> Result<f64> {
    if rp.len() != rq.len() {
        return Err(Error::UnequalBatchSizes {
            first: rp.len(),
            other: rq.len(),
        });
    }
    if rp.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let (mp, mq) = (mean(rp), mean(rq));
    let prods: Vec<f64> = rp.iter().zip(rq).map(|(a, b)| (a - mp) * (b - mq)).collect();
    Ok(pairwise_sum(&prods) / rp.len() as f64)
}

/// Per-batch IPS terms `r^t_i = y w` for `mis_variance_naive`.
fn ips_terms(batch: &Batch, spec: &PolicySpec, theta: &ModelParams) -> Result<Vec<f64>> {
    let (y, w) = losses_and_weights(&batch.interactions, spec, theta)?;
    Ok(y.iter().zip(&w).map(|(y, w)| y * w).collect())
}

/// Components of the naive-MIS variance estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MisVariance {
    /// `sum_t V(r^t)` with `V(r) = sum (r - mean)^2 / (n (n - 1))`.
    pub variance_term: f64,
    /// `2 sum_{p<q} n_p n_q Cov(r^p, r^q)`.
    pub covariance_term: f64,
    /// `(variance_term + covariance_term) / n^2`, `n` the pooled size.
    pub total: f64,
}

/// Variance estimate of the naive MIS estimator, with cross-batch covariance
/// terms. Requires equal batch sizes; every pair `p < q` of batches
/// contributes a covariance term.
pub fn mis_variance_naive(batches: &[Batch], spec: &PolicySpec, theta: &ModelParams) -> Result<MisVariance> {
    let first = batches.first().ok_or(Error::Empty("batch list"))?.len();
    if let Some(b) = batches.iter().find(|b| b.len() != first) {
        return Err(Error::UnequalBatchSizes {
            first,
            other: b.len(),
        });
    }
    if first < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: first });
    }
    let terms: Vec<Vec<f64>> = batches.iter().map(|b| ips_terms(b, spec, theta)).collect::<Result<_>>()?;
    let nt = first as f64;
    let mut variance_term = 0.0;
    for r in &terms {
        variance_term += weighted::variance_of(r)? / nt;
    }
    let mut covariance_term = 0.0;
    for p in 0..terms.len() {
        for q in p + 1..terms.len() {
            covariance_term += 2.0 * nt * nt * cross_covariance(&terms[p], &terms[q])?;
        }
    }
    let n = nt * terms.len() as f64;
    Ok(MisVariance {
        variance_term,
        covariance_term,
        total: (variance_term + covariance_term) / (n * n),
    })
}

#[cfg(test)]
mod tests {
    use super::weighted::*;
    use super::*;
    use alloc::vec;

    fn it(y: f64, propensity: f64, a: f64) -> Interaction {
        Interaction {
            x: Vec::new(),
            a: Action::Continuous(a),
            y,
            propensity,
        }
    }

    #[test]
    fn single_sample_arithmetic() {
        assert_eq!(ips(&[-1.0], &[2.0]), -2.0);
        assert_eq!(clipped_ips(&[-1.0], &[10.0], 5.0), -5.0);
        assert_eq!(clipped_ips(&[-1.0, -0.5], &[10.0, 3.0], f64::INFINITY), ips(&[-1.0, -0.5], &[10.0, 3.0]));
        assert!(clipped_ips(&[-1.0], &[10.0], 1e-300).abs() < 1e-299);
        // pi_theta = pi_m = 0.5, alpha = 0.5: w = 1, w_ix = 1 / 1.5
        assert!((ips_ix(&[-1.0], &[1.0], 0.5) + 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(ips_ix(&[-1.0, -0.3], &[4.0, 0.2], 0.0), ips(&[-1.0, -0.3], &[4.0, 0.2]));
    }

    #[test]
    fn snips_hand_example() {
        assert!((snips(&[-1.0, 0.0], &[1.0, 3.0]).unwrap() + 0.25).abs() < 1e-15);
        assert_eq!(snips(&[-1.0], &[0.0]), Err(Error::DegenerateWeights));
    }

    #[test]
    fn variance_hand_examples() {
        // chi = (-1, 0)
        assert!((clipped_variance(&[-1.0, 0.0], &[1.0, 1.0], 10.0).unwrap() - 0.5).abs() < 1e-15);
        // zeta = (w_ix - 1) y = (0.5, -0.5): y = (-1, 1), w = (0.5, 0.5)
        assert!((ix_variance(&[-1.0, 1.0], &[0.5, 0.5], 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(clipped_variance(&[-0.3; 4], &[1.0; 4], 1.0).unwrap(), 0.0);
        assert!(matches!(ix_variance(&[-1.0], &[1.0], 0.0), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn ix_weight_is_capped() {
        for w in [0.0, 0.3, 1.0, 10.0, 1e6, 1e300] {
            assert!(ix_weight(w, 0.25) <= 4.0);
        }
    }

    #[test]
    fn order_statistic() {
        let w = [3.0, 9.0, 1.0, 7.0, 5.0, 8.0, 2.0];
        assert_eq!(order_statistic_clip(&w, 5).unwrap(), 3.0);
        assert_eq!(order_statistic_clip(&w[..3], 5).unwrap(), 1.0);
    }

    #[test]
    fn on_policy_estimates_are_average_loss() {
        let spec = PolicySpec::gaussian(1.0).with_intercept(true);
        let theta = ModelParams::new(vec![0.2]).unwrap();
        let data: Vec<Interaction> = [(-0.1, 0.3), (-0.7, -0.4), (-0.4, 1.2)]
            .iter()
            .map(|&(y, a)| {
                let p = crate::policy::density(&spec, &theta, &[], &Action::Continuous(a)).unwrap();
                it(y, p, a)
            })
            .collect();
        let avg = -0.4;
        assert!((ips_estimate(&data, &spec, &theta).unwrap() - avg).abs() < 1e-15);
        assert!((snips_estimate(&data, &spec, &theta).unwrap() - avg).abs() < 1e-15);
        assert_eq!(empirical_variance_ips_ix(&data, &spec, &theta, 0.0).unwrap(), 0.0);
        assert!(empirical_variance_ips(&data, &spec, &theta, f64::INFINITY).unwrap() > 0.0);
    }

    #[test]
    fn zero_propensity_is_rejected() {
        let spec = PolicySpec::gaussian(1.0).with_intercept(true);
        let theta = ModelParams::new(vec![0.0]).unwrap();
        let err = ips_estimate(&[it(-1.0, 0.0, 0.0)], &spec, &theta).unwrap_err();
        assert!(matches!(err, Error::PropensityUnderflow(_)));
    }

    #[test]
    fn config_validation() {
        let cfg = EstimatorConfig {
            variant: EstimatorVariant::ClippedIps,
            alpha: 0.0,
            mis_weights: MisWeights::None,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mis_single_batch_matches_ips() {
        let spec = PolicySpec::gaussian(1.0).with_intercept(true);
        let behavior = ModelParams::new(vec![0.0]).unwrap();
        let theta = ModelParams::new(vec![0.5]).unwrap();
        let data: Vec<Interaction> = [(-0.2, 0.1), (-0.9, -1.0), (-0.5, 0.8)]
            .iter()
            .map(|&(y, a)| {
                let p = crate::policy::density(&spec, &behavior, &[], &Action::Continuous(a)).unwrap();
                it(y, p, a)
            })
            .collect();
        let batch = Batch::new(data.clone(), behavior, 0).unwrap();
        let single = ips_estimate(&data, &spec, &theta).unwrap();
        let mis = mis_estimate(core::slice::from_ref(&batch), &spec, &theta, MisWeights::Naive).unwrap();
        assert!((single - mis).abs() < 1e-15);
        let bal = mis_estimate(core::slice::from_ref(&batch), &spec, &theta, MisWeights::Balance).unwrap();
        assert!((single - bal).abs() < 1e-12);
        assert!(batch.spot_check(&spec, 3, 1e-12).unwrap());
    }

    #[test]
    fn mis_rejects_unequal_batches() {
        let spec = PolicySpec::gaussian(1.0).with_intercept(true);
        let b0 = ModelParams::new(vec![0.0]).unwrap();
        let mk = |n: usize| {
            Batch::new((0..n).map(|i| it(-0.5, 0.3, i as f64 * 0.1)).collect(), b0.clone(), 0).unwrap()
        };
        let err = mis_variance_naive(&[mk(3), mk(4)], &spec, &b0).unwrap_err();
        assert!(matches!(err, Error::UnequalBatchSizes { .. }));
        assert!(matches!(mis_estimate(&[], &spec, &b0, MisWeights::Naive), Err(Error::Empty(_))));
    }

    #[test]
    fn cross_covariance_of_identical_batches_is_their_variance() {
        let r = [-0.3, -1.2, 0.0, -0.7, -0.05];
        let m = r.iter().sum::<f64>() / 5.0;
        let biased: f64 = r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 5.0;
        assert!((cross_covariance(&r, &r).unwrap() - biased).abs() < 1e-15);
    }
}

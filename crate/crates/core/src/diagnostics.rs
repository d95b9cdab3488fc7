//! Closed-form checks, estimator bias/variance studies, rate fitting and
//! brute-force oracles.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{Experiment, Method, RolloutPlan, RunResult};
use crate::env::{EnvSpec, GaussianQuadratic, RiskEstimate};
use crate::error::{invalid, Error, Result};
use crate::estimators::weighted::{self, order_statistic_clip};
use crate::estimators::{losses_and_weights, mis_estimate, Batch, EstimatorVariant, MisWeights, CLIP_ORDER_STATISTIC};
use crate::numeric::{integrate, mean, normal_pdf, sample_variance};
use crate::optimizer::{minimize, Objective, OptimizerConfig};
use crate::policy::{action_from_noise, action_masses, Action, Family, ModelParams, PolicySpec};
use crate::rng::{Purpose, Streams};

/// Variance of `pi_theta / pi_theta*` under `pi_theta*` for two Gaussians
/// of common width: `exp((theta* - theta)^2 / sigma^2) - 1`.
pub fn gaussian_weight_variance(theta: f64, theta_star: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma must be > 0"));
    }
    let u = (theta_star - theta) / sigma;
    Ok(libm::expm1(u * u))
}

/// Excess risk `(theta - theta*)^2` of the unit quadratic problem.
pub fn quadratic_excess_risk(theta: f64, theta_star: f64) -> f64 {
    (theta - theta_star) * (theta - theta_star)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderProbe {
    pub beta: f64,
    pub sigma: f64,
    pub theta_star: f64,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolderReport {
    /// `(theta, Var / excess^beta)` per grid point.
    pub ratios: Vec<(f64, f64)>,
    /// Largest admissible constant: `1 / max ratio`.
    pub gamma: f64,
}

/// `Var(theta) / (theta - theta*)^(2 beta)` at a single point off `theta*`.
pub fn holder_ratio_at(theta: f64, theta_star: f64, sigma: f64, beta: f64) -> Result<f64> {
    let excess = quadratic_excess_risk(theta, theta_star);
    if !(excess > 0.0) {
        return Err(invalid("holder ratio is undefined at theta = theta_star"));
    }
    Ok(gaussian_weight_variance(theta, theta_star, sigma)? / libm::pow(excess, beta))
}

/// Limit of the ratio as `theta -> theta*`: `1 / sigma^2` for `beta = 1`,
/// zero for `beta < 1`.
pub fn holder_ratio_limit(sigma: f64, beta: f64) -> f64 {
    if beta < 1.0 {
        0.0
    } else {
        1.0 / (sigma * sigma)
    }
}

pub fn holder_ratio(probe: &HolderProbe) -> Result<HolderReport> {
    if !(probe.beta > 0.0 && probe.beta <= 1.0) {
        return Err(invalid("beta must lie in (0, 1]"));
    }
    if probe.grid.is_empty() {
        return Err(Error::Empty("holder grid"));
    }
    let ratios = probe
        .grid
        .iter()
        .map(|&t| Ok((t, holder_ratio_at(t, probe.theta_star, probe.sigma, probe.beta)?)))
        .collect::<Result<Vec<_>>>()?;
    let max = ratios.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(HolderReport { ratios, gamma: 1.0 / max })
}

/// Mean, variance and bias of replicated estimates against a known truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationSummary {
    pub mean: f64,
    pub variance: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    pub truth: f64,
    pub bias: f64,
}

impl ReplicationSummary {
    pub fn from_values(values: &[f64], truth: f64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: values.len(),
            });
        }
        let m = mean(values);
        let v = sample_variance(values);
        Ok(Self {
            mean: m,
            variance: v,
            stderr: libm::sqrt(v / values.len() as f64),
            truth,
            bias: m - truth,
        })
    }
}

/// Single-batch estimate with the study's hyperparameters: clipping at the
/// fifth-largest weight and IPS-IX at `alpha = 1 / n`.
pub fn default_estimate(variant: EstimatorVariant, y: &[f64], w: &[f64]) -> Result<f64> {
    match variant {
        EstimatorVariant::Ips => Ok(weighted::ips(y, w)),
        EstimatorVariant::ClippedIps => Ok(weighted::clipped_ips(y, w, order_statistic_clip(w, CLIP_ORDER_STATISTIC)?)),
        EstimatorVariant::Snips => weighted::snips(y, w),
        EstimatorVariant::IpsIx => Ok(weighted::ips_ix(y, w, 1.0 / y.len() as f64)),
    }
}

pub const STUDY_ESTIMATORS: [EstimatorVariant; 4] = [
    EstimatorVariant::Ips,
    EstimatorVariant::ClippedIps,
    EstimatorVariant::Snips,
    EstimatorVariant::IpsIx,
];

/// `E[cos(a)]` for `a ~ N(mu, sigma^2)` by adaptive quadrature over `mu +- 8 sigma`.
pub fn cosine_risk_quadrature(mu: f64, sigma: f64) -> f64 {
    integrate(
        &|a| libm::cos(a) * normal_pdf((a - mu) / sigma) / sigma,
        mu - 8.0 * sigma,
        mu + 8.0 * sigma,
        1e-13,
    )
}

/// `E[cos(a)] = exp(-sigma^2 / 2) cos(mu)`.
pub fn cosine_risk_exact(mu: f64, sigma: f64) -> f64 {
    libm::exp(-0.5 * sigma * sigma) * libm::cos(mu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyRow {
    pub shift: f64,
    pub estimator: EstimatorVariant,
    pub n: usize,
    pub replications: usize,
    pub summary: ReplicationSummary,
}

/// Cosine-loss study: actions logged from `N(0, 1)`, losses `cos(a)`,
/// targets `N(shift, 1)`. Every replication's sample is shared by all shifts
/// and estimators.
pub fn estimator_study(
    shifts: &[f64],
    estimators: &[EstimatorVariant],
    n: usize,
    replications: usize,
    streams: &Streams,
) -> Result<Vec<StudyRow>> {
    if replications < 100 {
        return Err(Error::InsufficientSamples {
            needed: 100,
            got: replications,
        });
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mut estimates = vec![vec![Vec::with_capacity(replications); estimators.len()]; shifts.len()];
    for r in 0..replications {
        let mut rng = streams.stream(r as u64, Purpose::Replication);
        let actions: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = actions.iter().map(|a| libm::cos(*a)).collect();
        for (si, &shift) in shifts.iter().enumerate() {
            // N(shift, 1) / N(0, 1) = exp(shift a - shift^2 / 2)
            let w: Vec<f64> = actions.iter().map(|a| libm::exp(shift * a - 0.5 * shift * shift)).collect();
            for (ei, &e) in estimators.iter().enumerate() {
                estimates[si][ei].push(default_estimate(e, &y, &w)?);
            }
        }
    }
    let mut rows = Vec::with_capacity(shifts.len() * estimators.len());
    for (si, &shift) in shifts.iter().enumerate() {
        let truth = cosine_risk_quadrature(shift, 1.0);
        for (ei, &e) in estimators.iter().enumerate() {
            rows.push(StudyRow {
                shift,
                estimator: e,
                n,
                replications,
                summary: ReplicationSummary::from_values(&estimates[si][ei], truth)?,
            });
        }
    }
    Ok(rows)
}

/// Replicated off-policy estimates of a Gaussian-quadratic target from data
/// logged by `behavior`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffPolicyStudy {
    pub ips: ReplicationSummary,
    pub ips_ix: ReplicationSummary,
    /// Naive MIS over two equal halves logged by `behavior` and `second`.
    pub mis: Option<ReplicationSummary>,
    /// Largest importance weight seen across replications.
    pub max_weight: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn off_policy_study(
    env: &GaussianQuadratic,
    spec: &PolicySpec,
    behavior: &ModelParams,
    second: Option<&ModelParams>,
    target: &ModelParams,
    n: usize,
    alpha: f64,
    replications: usize,
    streams: &Streams,
) -> Result<OffPolicyStudy> {
    let env_spec = EnvSpec::GaussianQuadratic(env.clone());
    let truth = env_spec.closed_form_risk(spec, target)?;
    let mut ips = Vec::with_capacity(replications);
    let mut ix = Vec::with_capacity(replications);
    let mut mis = Vec::with_capacity(replications);
    let mut max_weight = 0.0f64;
    for r in 0..replications {
        let rs = streams.child(r as u64);
        let data = env_spec.collect(spec, behavior, n, &rs, 0)?;
        let (y, w) = losses_and_weights(&data, spec, target)?;
        max_weight = w.iter().copied().fold(max_weight, f64::max);
        ips.push(weighted::ips(&y, &w));
        ix.push(weighted::ips_ix(&y, &w, alpha));
        if let Some(second) = second {
            let half = n / 2;
            let first = Batch::new(env_spec.collect(spec, behavior, half, &rs, 1)?, behavior.clone(), 0)?;
            let other = Batch::new(env_spec.collect(spec, second, half, &rs, 2)?, second.clone(), 1)?;
            mis.push(mis_estimate(&[first, other], spec, target, MisWeights::Naive)?);
        }
    }
    Ok(OffPolicyStudy {
        ips: ReplicationSummary::from_values(&ips, truth)?,
        ips_ix: ReplicationSummary::from_values(&ix, truth)?,
        mis: if second.is_some() {
            Some(ReplicationSummary::from_values(&mis, truth)?)
        } else {
            None
        },
        max_weight,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
    pub dropped: usize,
}

/// Least-squares fit of `ln excess` against `ln n`. Nonpositive excess
/// values are dropped with a warning.
pub fn fit_log_log(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, d)| *n > 0.0 && *d > 0.0 && d.is_finite())
        .map(|(n, d)| (libm::log(*n), libm::log(*d)))
        .collect();
    let dropped = points.len() - kept.len();
    if dropped > 0 {
        log::warn!("rate fit: dropped {dropped} nonpositive excess-risk values");
    }
    if kept.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: kept.len(),
        });
    }
    let xs: Vec<f64> = kept.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.1).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("rate fit needs at least two distinct sample sizes"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
        points: kept.len(),
        dropped,
    })
}

/// Pooled log-log fit of excess risk against cumulative sample size over
/// every record of every run.
pub fn rate_slope(results: &[RunResult]) -> Result<SlopeFit> {
    let mut points = Vec::new();
    for r in results {
        for rec in &r.records {
            let d = rec.excess_risk.ok_or(Error::NoClosedForm("excess risk unknown for rate fit"))?;
            points.push((rec.cum_n as f64, d));
        }
    }
    fit_log_log(&points)
}

/// On-policy Monte-Carlo estimate of `L(theta)`.
pub fn mc_risk_oracle<R: Rng + ?Sized>(
    env: &EnvSpec,
    spec: &PolicySpec,
    theta: &ModelParams,
    samples: usize,
    rng: &mut R,
) -> Result<RiskEstimate> {
    env.monte_carlo_risk(spec, theta, samples, rng)
}

/// Placeholder grid of logging distances `|theta* - theta_0|`.
pub const DISTANCE_GRID: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 3.0, 4.0];
pub const SIGMA_GRID: [f64; 4] = [0.1, 0.3, 1.0, 3.0];

/// Gaussian-quadratic experiment with logging model `theta* - delta0` and
/// policy width `sigma`.
pub fn distance_experiment(env: &GaussianQuadratic, delta0: f64, sigma: f64, plan: &RolloutPlan) -> Result<Experiment> {
    let policy = PolicySpec::gaussian(sigma).with_intercept(true);
    let theta0 = ModelParams::new(vec![env.theta_star - delta0])?;
    Experiment::new(EnvSpec::GaussianQuadratic(env.clone()), policy, theta0, plan.clone())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceRow {
    pub delta0: f64,
    pub sigma: f64,
    pub method: Method,
    pub seed: u64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceBest {
    pub delta0: f64,
    pub method: Method,
    pub seed: u64,
    pub sigma: f64,
    pub final_loss: f64,
}

/// Best final loss over the sigma grid per `(delta0, method, seed)`; ties go
/// to the smaller sigma.
pub fn best_over_sigma(rows: &[DistanceRow]) -> Vec<DistanceBest> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| {
        a.delta0
            .total_cmp(&b.delta0)
            .then(a.method.cmp(&b.method))
            .then(a.seed.cmp(&b.seed))
            .then(a.sigma.total_cmp(&b.sigma))
    });
    let mut out: Vec<DistanceBest> = Vec::new();
    for r in sorted {
        match out.last_mut() {
            Some(b) if b.delta0 == r.delta0 && b.method == r.method && b.seed == r.seed => {
                if r.final_loss < b.final_loss {
                    b.sigma = r.sigma;
                    b.final_loss = r.final_loss;
                }
            }
            _ => out.push(DistanceBest {
                delta0: r.delta0,
                method: r.method,
                seed: r.seed,
                sigma: r.sigma,
                final_loss: r.final_loss,
            }),
        }
    }
    out
}

/// Sequential sweep over `delta0 x sigma x method x seed`.
pub fn distance_sweep(
    env: &GaussianQuadratic,
    delta0s: &[f64],
    sigmas: &[f64],
    plan: &RolloutPlan,
    seeds: &[u64],
) -> Result<Vec<DistanceRow>> {
    if delta0s.is_empty() || sigmas.is_empty() || seeds.is_empty() {
        return Err(Error::Empty("distance sweep grid"));
    }
    let mut rows = Vec::new();
    for &delta0 in delta0s {
        for &sigma in sigmas {
            let exp = distance_experiment(env, delta0, sigma, plan)?;
            for method in [Method::Scrm, Method::Crm] {
                for &seed in seeds {
                    rows.push(distance_cell(&exp, delta0, sigma, method, seed)?);
                }
            }
        }
    }
    Ok(rows)
}

pub fn distance_cell(exp: &Experiment, delta0: f64, sigma: f64, method: Method, seed: u64) -> Result<DistanceRow> {
    let run = crate::engine::run(method, exp, seed).map_err(|e| e.error)?;
    let final_loss = run.final_record().map(|r| r.test_loss).ok_or(Error::Empty("run records"))?;
    Ok(DistanceRow {
        delta0,
        sigma,
        method,
        seed,
        final_loss,
    })
}

/// Fixed sample for the full-information skyline fit.
struct Skyline<'a> {
    env: &'a EnvSpec,
    spec: &'a PolicySpec,
    contexts: Vec<crate::env::ContextDraw>,
    action_noise: Vec<f64>,
    loss_noise: Vec<f64>,
    step: f64,
}

impl Skyline<'_> {
    /// Sample-average risk with the action randomness held fixed (continuous
    /// actions) or integrated exactly (discrete actions).
    fn risk(&self, theta: &[f64]) -> Result<f64> {
        let theta = ModelParams::new(theta.to_vec())?;
        let mut total = Vec::with_capacity(self.contexts.len());
        for (i, ctx) in self.contexts.iter().enumerate() {
            let v = match self.spec.family {
                Family::SoftmaxKronecker => {
                    let masses = action_masses(self.spec, &theta, &ctx.features)?;
                    let mut acc = 0.0;
                    for (a, p) in masses.iter().enumerate() {
                        acc += p * self.env.loss_with_noise(ctx, &Action::Discrete(a as u32), self.loss_noise[i])?;
                    }
                    acc
                }
                Family::GaussianLinear | Family::Lognormal => {
                    let a = action_from_noise(self.spec, &theta, &ctx.features, self.action_noise[i])?;
                    self.env.loss_with_noise(ctx, &a, self.loss_noise[i])?
                }
            };
            total.push(v);
        }
        Ok(mean(&total))
    }
}

impl Objective for Skyline<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.risk(theta)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let value = self.risk(theta)?;
        let mut grad = vec![0.0; theta.len()];
        let mut probe = theta.to_vec();
        for j in 0..theta.len() {
            probe[j] = theta[j] + self.step;
            let up = self.risk(&probe)?;
            probe[j] = theta[j] - self.step;
            let down = self.risk(&probe)?;
            probe[j] = theta[j];
            grad[j] = (up - down) / (2.0 * self.step);
        }
        Ok((value, grad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkylineFit {
    pub theta: ModelParams,
    pub risk: RiskEstimate,
}

/// Full-information reference model: minimizes the sample-average risk over
/// `samples` fixed draws, then evaluates it on `eval_samples` fresh ones.
pub fn skyline(
    env: &EnvSpec,
    spec: &PolicySpec,
    theta_init: &ModelParams,
    samples: usize,
    eval_samples: usize,
    opt_cfg: &OptimizerConfig,
    streams: &Streams,
) -> Result<SkylineFit> {
    if samples == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut ctx_rng = streams.stream(0, Purpose::Skyline);
    let mut noise_rng = streams.stream(1, Purpose::Skyline);
    let contexts: Vec<_> = (0..samples).map(|_| env.sample_context(&mut ctx_rng)).collect();
    let action_noise: Vec<f64> = (0..samples).map(|_| StandardNormal.sample(&mut noise_rng)).collect();
    let loss_noise: Vec<f64> = (0..samples).map(|_| StandardNormal.sample(&mut noise_rng)).collect();
    let objective = Skyline {
        env,
        spec,
        contexts,
        action_noise,
        loss_noise,
        step: 1e-4,
    };
    let fit = minimize(&objective, theta_init.as_slice(), opt_cfg).map_err(|e| e.error)?;
    let mut eval_rng = streams.stream(2, Purpose::Skyline);
    let risk = env.monte_carlo_risk(spec, &fit.theta, eval_samples, &mut eval_rng)?;
    Ok(SkylineFit { theta: fit.theta, risk })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{E, PI};

    #[test]
    fn weight_variance_examples() {
        assert_eq!(gaussian_weight_variance(1.0, 1.0, 1.0).unwrap(), 0.0);
        assert!((gaussian_weight_variance(0.0, 1.0, 1.0).unwrap() - (E - 1.0)).abs() < 1e-12);
        assert!((gaussian_weight_variance(0.0, 1.0, 2.0).unwrap() - (0.25f64.exp() - 1.0)).abs() < 1e-15);
        assert!(gaussian_weight_variance(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn holder_examples() {
        assert!((holder_ratio_at(0.0, 1.0, 1.0, 1.0).unwrap() - (E - 1.0)).abs() < 1e-12);
        assert!((holder_ratio_at(1.0 + 1e-6, 1.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-6);
        assert!(holder_ratio_at(1.0, 1.0, 1.0, 1.0).is_err());
        let grid: Vec<f64> = (0..=20).filter(|&i| i != 10).map(|i| i as f64 / 10.0).collect();
        let report = holder_ratio(&HolderProbe {
            beta: 1.0,
            sigma: 1.0,
            theta_star: 1.0,
            grid,
        })
        .unwrap();
        let (argmax, max) = report.ratios.iter().copied().fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert!(argmax == 0.0 || argmax == 2.0);
        assert!((report.gamma - 1.0 / max).abs() < 1e-15);
        assert!((max - (E - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn cosine_quadrature_matches_closed_form() {
        for i in 0..5 {
            let mu = i as f64 * PI / 4.0;
            assert!((cosine_risk_quadrature(mu, 1.0) - cosine_risk_exact(mu, 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_power_laws() {
        let pts: Vec<(f64, f64)> = (0..8).map(|m| {
            let n = 100.0 * 2f64.powi(m);
            (n, 3.0 / n)
        }).collect();
        assert!((fit_log_log(&pts).unwrap().slope + 1.0).abs() < 1e-6);
        let pts: Vec<(f64, f64)> = pts.iter().map(|(n, _)| (*n, 0.7 / n.sqrt())).collect();
        let f = fit_log_log(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-6);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let mut with_zero = pts.clone();
        with_zero.push((1e6, 0.0));
        assert_eq!(fit_log_log(&with_zero).unwrap().dropped, 1);
        assert!(fit_log_log(&pts[..2]).is_err());
    }

    #[test]
    fn best_over_sigma_ties_prefer_smaller_sigma() {
        let row = |sigma, final_loss| DistanceRow {
            delta0: 1.0,
            sigma,
            method: Method::Scrm,
            seed: 0,
            final_loss,
        };
        let best = best_over_sigma(&[row(1.0, -0.5), row(0.3, -0.5), row(3.0, -0.2)]);
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].sigma, 0.3);
    }
}

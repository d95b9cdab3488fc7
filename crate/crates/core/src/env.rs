//! Synthetic logged-bandit environments.
//!
//! Every environment draws contexts from a fixed distribution and emits losses
//! in `[-1, 0]`. Raw rewards `r` with declared bounds `[r_min, r_max]` are
//! mapped to `y = -(r - r_min) / (r_max - r_min)`.
//!
//! Loss noise is always driven by exactly one standard-normal draw per
//! interaction (unused by noiseless environments) so that loss-noise streams
//! stay aligned across methods that share a seed.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rand::SeedableRng;

use crate::error::{invalid, Error, Result};
use crate::numeric::{mean, normal_cdf, normal_pdf, sample_variance, sigmoid};
use crate::policy::{sample_action, Action, Family, ModelParams, PolicySpec};
use crate::rng::{Purpose, Streams};

/// One logged tuple of bandit feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub x: Vec<f64>,
    pub a: Action,
    /// Loss in `[-1, 0]`.
    pub y: f64,
    /// Behavior-policy density (or mass) of `a` given `x`.
    pub propensity: f64,
}

/// Unobserved state attached to a context draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Latent {
    None,
    /// User potential `p > 0` (advertising setting).
    Potential(f64),
    /// True label bit mask (multilabel setting).
    Labels(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextDraw {
    pub features: Vec<f64>,
    pub latent: Latent,
}

/// Monte-Carlo or exact risk value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub mean: f64,
    /// Zero for closed forms.
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskMode {
    ClosedForm,
    MonteCarlo(usize),
}

/// Non-contextual Gaussian example: `pi_theta = N(theta, sigma^2)`, loss
/// `(a - y_t)^2 - 1` with `y_t ~ N(theta_star, noise_std^2)`, clamped to
/// `[-1, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianQuadratic {
    pub theta_star: f64,
    pub noise_std: f64,
}

impl Default for GaussianQuadratic {
    fn default() -> Self {
        Self {
            theta_star: 1.0,
            noise_std: 0.3,
        }
    }
}

impl GaussianQuadratic {
    /// Exact risk of a policy `N(mean, policy_sigma^2)` under the clamped loss.
    ///
    /// With `Z = a - y_t ~ N(mean - theta_star, s^2)` the loss is
    /// `min(Z^2, 1) - 1`, whose expectation has a closed form in terms of the
    /// normal CDF and density.
    pub fn risk(&self, mean: f64, policy_sigma: f64) -> f64 {
        let m = mean - self.theta_star;
        let s = libm::sqrt(policy_sigma * policy_sigma + self.noise_std * self.noise_std);
        if s == 0.0 {
            return libm::fmin(m * m, 1.0) - 1.0;
        }
        let lo = (-1.0 - m) / s;
        let hi = (1.0 - m) / s;
        let (pdf_lo, pdf_hi) = (normal_pdf(lo), normal_pdf(hi));
        let inside = normal_cdf(hi) - normal_cdf(lo);
        let second_moment_inside =
            m * m * inside + 2.0 * m * s * (pdf_lo - pdf_hi) + s * s * (inside + lo * pdf_lo - hi * pdf_hi);
        second_moment_inside + (1.0 - inside) - 1.0
    }

    /// Probability that a raw loss is clamped at 0.
    pub fn clamp_probability(&self, mean: f64, policy_sigma: f64) -> f64 {
        let m = mean - self.theta_star;
        let s = libm::sqrt(policy_sigma * policy_sigma + self.noise_std * self.noise_std);
        1.0 - (normal_cdf((1.0 - m) / s) - normal_cdf((-1.0 - m) / s))
    }
}

/// Personalized pricing: revenue `r = p (a(xbar) - b(xbar) p + eps)` with
/// `a(x) = 2 x^2`, `b(x) = 0.6 x`, contexts uniform on `[1, 2]^k` and `xbar`
/// the mean of the first `l` coordinates. Prices are clipped to
/// `[0, price_max]` and the demand noise to `[-noise_clip, noise_clip]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pricing {
    k: usize,
    l: usize,
    price_max: f64,
    noise_clip: f64,
    r_min: f64,
    r_max: f64,
}

impl Default for Pricing {
    fn default() -> Self {
        Self::new(10, 3, 5.0, 3.0).expect("default pricing parameters are valid")
    }
}

impl Pricing {
    pub fn new(k: usize, l: usize, price_max: f64, noise_clip: f64) -> Result<Self> {
        if k < 2 || l == 0 || l >= k {
            return Err(invalid("pricing requires k >= 2 and 0 < l < k"));
        }
        if !(price_max > 0.0) || !(noise_clip >= 0.0) || !price_max.is_finite() || !noise_clip.is_finite() {
            return Err(invalid("pricing price_max must be positive and noise_clip nonnegative"));
        }
        let (r_min, r_max) = Self::revenue_bounds(price_max, noise_clip);
        Ok(Self {
            k,
            l,
            price_max,
            noise_clip,
            r_min,
            r_max,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn price_max(&self) -> f64 {
        self.price_max
    }

    pub fn noise_clip(&self) -> f64 {
        self.noise_clip
    }

    pub fn demand_a(x: f64) -> f64 {
        2.0 * x * x
    }

    pub fn demand_b(x: f64) -> f64 {
        0.6 * x
    }

    /// Unclipped revenue.
    pub fn revenue(xbar: f64, price: f64, noise: f64) -> f64 {
        price * (Self::demand_a(xbar) - Self::demand_b(xbar) * price + noise)
    }

    fn revenue_bounds(price_max: f64, noise_clip: f64) -> (f64, f64) {
        // Revenue is linear in the noise and concave in the price, so the
        // extremes over the box sit at noise = +-clip and at the price
        // endpoints or the vertex.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let steps = 2000;
        for i in 0..=steps {
            let x = 1.0 + i as f64 / steps as f64;
            for noise in [-noise_clip, noise_clip] {
                let a = Self::demand_a(x) + noise;
                let b = Self::demand_b(x);
                let vertex = (a / (2.0 * b)).clamp(0.0, price_max);
                for p in [0.0, price_max, vertex] {
                    let r = p * (a - b * p);
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
        }
        (lo, hi)
    }

    pub fn xbar(&self, x: &[f64]) -> f64 {
        mean(&x[..self.l])
    }
}

/// Advertising with latent user potentials. A group `g` in {low, high} is
/// drawn uniformly, `p | g ~ N(mu_g, group_std^2)` (floored at
/// `potential_floor`), and the observed context is two noisy views of `p`.
/// Reward `r = max(r_l(p, a), -0.1)` with `r_l = a / p` if `a < p` and
/// `(p - a) / 2 + 1` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub group_means: [f64; 2],
    pub group_std: f64,
    pub feature_noise: f64,
    pub potential_floor: f64,
}

impl Default for Potential {
    fn default() -> Self {
        Self {
            group_means: [1.0, 3.0],
            group_std: 0.5,
            feature_noise: 0.5,
            potential_floor: 0.05,
        }
    }
}

pub const POTENTIAL_REWARD_FLOOR: f64 = -0.1;

impl Potential {
    pub fn reward(potential: f64, bid: f64) -> f64 {
        let raw = if bid < potential {
            bid / potential
        } else {
            0.5 * (potential - bid) + 1.0
        };
        raw.max(POTENTIAL_REWARD_FLOOR)
    }

    /// Log-space `(mu, sigma)` of the lognormal logging policy with mean 2
    /// and variance 1.
    pub fn logging_lognormal() -> (f64, f64) {
        let sigma2 = libm::log(1.25);
        (libm::log(2.0) - 0.5 * sigma2, libm::sqrt(sigma2))
    }
}

/// Multilabel classification turned into a bandit problem. Labels come from a
/// random linear-logit teacher over Gaussian contexts; the loss is the
/// Hamming loss minus one.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMultilabel {
    dim: usize,
    bits: usize,
    seed: u64,
    teacher_scale: f64,
    /// Row `j` holds `dim` weights followed by a bias for label `j`.
    teacher: Vec<f64>,
}

impl Default for SyntheticMultilabel {
    fn default() -> Self {
        Self::new(20, 4, 0, 3.0).expect("default multilabel parameters are valid")
    }
}

impl SyntheticMultilabel {
    pub fn new(dim: usize, bits: usize, seed: u64, teacher_scale: f64) -> Result<Self> {
        if dim == 0 || bits == 0 || bits > 16 {
            return Err(invalid("multilabel requires dim > 0 and 1 <= bits <= 16"));
        }
        if !teacher_scale.is_finite() {
            return Err(invalid("multilabel teacher_scale must be finite"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = teacher_scale / libm::sqrt(dim as f64);
        let mut teacher = Vec::with_capacity(bits * (dim + 1));
        for _ in 0..bits {
            for _ in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                teacher.push(norm * z);
            }
            let b: f64 = StandardNormal.sample(&mut rng);
            teacher.push(0.5 * b);
        }
        Ok(Self {
            dim,
            bits,
            seed,
            teacher_scale,
            teacher,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn teacher_scale(&self) -> f64 {
        self.teacher_scale
    }

    /// Probability that label `j` is on given context `x`.
    pub fn label_probability(&self, x: &[f64], j: usize) -> f64 {
        let row = &self.teacher[j * (self.dim + 1)..(j + 1) * (self.dim + 1)];
        let s: f64 = row[..self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[self.dim];
        sigmoid(s)
    }

    /// Fraction of mismatched bits.
    pub fn hamming(&self, labels: u32, action: u32) -> f64 {
        let mask = (1u32 << self.bits) - 1;
        ((labels ^ action) & mask).count_ones() as f64 / self.bits as f64
    }
}

/// A synthetic data-generating process.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    GaussianQuadratic(GaussianQuadratic),
    Pricing(Pricing),
    Potential(Potential),
    SyntheticMultilabel(SyntheticMultilabel),
}

impl EnvSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::GaussianQuadratic(_) => "gaussian_quadratic",
            EnvSpec::Pricing(_) => "pricing",
            EnvSpec::Potential(_) => "potential",
            EnvSpec::SyntheticMultilabel(_) => "synthetic_multilabel",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::GaussianQuadratic(g) => {
                if !g.theta_star.is_finite() || !(g.noise_std >= 0.0) || !g.noise_std.is_finite() {
                    return Err(invalid("gaussian_quadratic needs finite theta_star and noise_std >= 0"));
                }
            }
            EnvSpec::Potential(p) => {
                if !(p.group_std > 0.0) || !(p.feature_noise >= 0.0) || !(p.potential_floor > 0.0) {
                    return Err(invalid("potential needs group_std > 0, feature_noise >= 0, potential_floor > 0"));
                }
            }
            EnvSpec::Pricing(_) | EnvSpec::SyntheticMultilabel(_) => {}
        }
        Ok(())
    }

    pub fn context_dim(&self) -> usize {
        match self {
            EnvSpec::GaussianQuadratic(_) => 0,
            EnvSpec::Pricing(p) => p.k,
            EnvSpec::Potential(_) => 2,
            EnvSpec::SyntheticMultilabel(m) => m.dim,
        }
    }

    /// The policy family each environment is designed for.
    pub fn default_policy(&self) -> PolicySpec {
        match self {
            EnvSpec::GaussianQuadratic(_) => PolicySpec::gaussian(0.3).with_intercept(true),
            EnvSpec::Pricing(_) => PolicySpec::gaussian(1.0),
            EnvSpec::Potential(_) => PolicySpec::lognormal(Potential::logging_lognormal().1).with_intercept(true),
            EnvSpec::SyntheticMultilabel(m) => PolicySpec::softmax_kronecker(m.bits, 0.1).with_intercept(true),
        }
    }

    /// The logging model used as `theta_0` by default.
    pub fn default_logging_model(&self, policy: &PolicySpec) -> ModelParams {
        let dim = policy.param_dim(self.context_dim());
        let mut theta = vec![0.0; dim];
        match self {
            // N(xbar, 1): equal weights on the active coordinates.
            EnvSpec::Pricing(p) if policy.family == Family::GaussianLinear && !policy.intercept => {
                for t in theta.iter_mut().take(p.l) {
                    *t = 1.0 / p.l as f64;
                }
            }
            EnvSpec::Potential(_) if policy.family == Family::Lognormal && policy.intercept => {
                theta[dim - 1] = Potential::logging_lognormal().0;
            }
            _ => {}
        }
        ModelParams::new(theta).expect("finite logging model")
    }

    /// Raw reward bounds `[r_min, r_max]` used for normalization.
    pub fn reward_bounds(&self) -> (f64, f64) {
        match self {
            EnvSpec::GaussianQuadratic(_) => (0.0, 1.0),
            EnvSpec::Pricing(p) => (p.r_min, p.r_max),
            EnvSpec::Potential(_) => (POTENTIAL_REWARD_FLOOR, 1.0),
            EnvSpec::SyntheticMultilabel(_) => (0.0, 1.0),
        }
    }

    fn normalize(&self, reward: f64) -> f64 {
        let (lo, hi) = self.reward_bounds();
        let r = reward.clamp(lo, hi);
        -(r - lo) / (hi - lo)
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> ContextDraw {
        match self {
            EnvSpec::GaussianQuadratic(_) => ContextDraw {
                features: Vec::new(),
                latent: Latent::None,
            },
            EnvSpec::Pricing(p) => ContextDraw {
                features: (0..p.k).map(|_| 1.0 + rng.random::<f64>()).collect(),
                latent: Latent::None,
            },
            EnvSpec::Potential(pot) => {
                let group = usize::from(rng.random::<bool>());
                let z: f64 = StandardNormal.sample(rng);
                let potential = (pot.group_means[group] + pot.group_std * z).max(pot.potential_floor);
                let features = (0..2)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(rng);
                        potential + pot.feature_noise * e
                    })
                    .collect();
                ContextDraw {
                    features,
                    latent: Latent::Potential(potential),
                }
            }
            EnvSpec::SyntheticMultilabel(ml) => {
                let features: Vec<f64> = (0..ml.dim).map(|_| StandardNormal.sample(rng)).collect();
                let mut labels = 0u32;
                for j in 0..ml.bits {
                    let u: f64 = rng.random();
                    if u < ml.label_probability(&features, j) {
                        labels |= 1 << j;
                    }
                }
                ContextDraw {
                    features,
                    latent: Latent::Labels(labels),
                }
            }
        }
    }

    /// Loss of action `a` given a context draw and a standard-normal noise
    /// draw `z`.
    pub fn loss_with_noise(&self, ctx: &ContextDraw, a: &Action, z: f64) -> Result<f64> {
        let y = match (self, a) {
            (EnvSpec::GaussianQuadratic(g), Action::Continuous(v)) => {
                let target = g.theta_star + g.noise_std * z;
                let raw = (v - target) * (v - target) - 1.0;
                if raw > 0.0 {
                    log::trace!("gaussian_quadratic loss {raw:.4} clamped to 0");
                }
                raw.min(0.0)
            }
            (EnvSpec::Pricing(p), Action::Continuous(v)) => {
                let price = v.clamp(0.0, p.price_max);
                let noise = z.clamp(-p.noise_clip, p.noise_clip);
                self.normalize(Pricing::revenue(p.xbar(&ctx.features), price, noise))
            }
            (EnvSpec::Potential(_), Action::Continuous(v)) => {
                let Latent::Potential(potential) = ctx.latent else {
                    return Err(invalid("potential context is missing its latent potential"));
                };
                self.normalize(Potential::reward(potential, *v))
            }
            (EnvSpec::SyntheticMultilabel(ml), Action::Discrete(mask)) => {
                let Latent::Labels(labels) = ctx.latent else {
                    return Err(invalid("multilabel context is missing its labels"));
                };
                ml.hamming(labels, *mask) - 1.0
            }
            _ => return Err(Error::ActionMismatch(self.name())),
        };
        assert!((-1.0..=0.0).contains(&y), "loss {y} escaped [-1, 0]");
        Ok(y)
    }

    pub fn sample_loss<R: Rng + ?Sized>(&self, ctx: &ContextDraw, a: &Action, rng: &mut R) -> Result<f64> {
        let z: f64 = StandardNormal.sample(rng);
        self.loss_with_noise(ctx, a, z)
    }

    /// Collects `n` interactions under `theta` for rollout `rollout`, using the
    /// context, action and loss-noise streams of `streams`.
    pub fn collect(
        &self,
        policy: &PolicySpec,
        theta: &ModelParams,
        n: usize,
        streams: &Streams,
        rollout: u64,
    ) -> Result<Vec<Interaction>> {
        let mut ctx_rng = streams.stream(rollout, Purpose::Context);
        let mut act_rng = streams.stream(rollout, Purpose::Action);
        let mut loss_rng = streams.stream(rollout, Purpose::LossNoise);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let ctx = self.sample_context(&mut ctx_rng);
            let (a, propensity) = sample_action(policy, theta, &ctx.features, &mut act_rng)?;
            let y = self.sample_loss(&ctx, &a, &mut loss_rng)?;
            out.push(Interaction {
                x: ctx.features,
                a,
                y,
                propensity,
            });
        }
        Ok(out)
    }

    pub fn closed_form_risk(&self, policy: &PolicySpec, theta: &ModelParams) -> Result<f64> {
        match self {
            EnvSpec::GaussianQuadratic(g) => {
                if policy.family != Family::GaussianLinear {
                    return Err(Error::NoClosedForm("gaussian_quadratic with a non-Gaussian policy"));
                }
                let expected = policy.param_dim(0);
                if theta.dim() != expected || expected != 1 {
                    return Err(Error::DimensionMismatch {
                        what: "theta",
                        expected: 1,
                        got: theta.dim(),
                    });
                }
                Ok(g.risk(theta.as_slice()[0], policy.sigma))
            }
            other => Err(Error::NoClosedForm(other.name())),
        }
    }

    /// On-policy Monte-Carlo estimate of `L(theta)` from `n` fresh samples.
    pub fn monte_carlo_risk<R: Rng + ?Sized>(
        &self,
        policy: &PolicySpec,
        theta: &ModelParams,
        n: usize,
        rng: &mut R,
    ) -> Result<RiskEstimate> {
        if n == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        let mut losses = Vec::with_capacity(n);
        for _ in 0..n {
            let ctx = self.sample_context(rng);
            let (a, _) = sample_action(policy, theta, &ctx.features, rng)?;
            losses.push(self.sample_loss(&ctx, &a, rng)?);
        }
        Ok(RiskEstimate {
            mean: mean(&losses),
            stderr: libm::sqrt(sample_variance(&losses) / n as f64),
        })
    }

    pub fn true_risk<R: Rng + ?Sized>(
        &self,
        policy: &PolicySpec,
        theta: &ModelParams,
        mode: RiskMode,
        rng: &mut R,
    ) -> Result<RiskEstimate> {
        match mode {
            RiskMode::ClosedForm => Ok(RiskEstimate {
                mean: self.closed_form_risk(policy, theta)?,
                stderr: 0.0,
            }),
            RiskMode::MonteCarlo(n) => self.monte_carlo_risk(policy, theta, n, rng),
        }
    }

    pub fn has_closed_form(&self) -> bool {
        matches!(self, EnvSpec::GaussianQuadratic(_))
    }

    /// `theta_star` when it is known analytically.
    pub fn optimal_model(&self) -> Option<ModelParams> {
        match self {
            EnvSpec::GaussianQuadratic(g) => ModelParams::new(vec![g.theta_star]).ok(),
            _ => None,
        }
    }
}

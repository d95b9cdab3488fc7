//! Experiment configuration: a TOML file with dotted section keys.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! env.kind = "gaussian_quadratic"
//! env.theta_star = 1.0
//! plan.n0 = 100
//! plan.rollouts = 10
//! ```
//!
//! Unknown keys are errors. Every omitted key takes a documented default, and
//! [`ExperimentConfig::resolve`] fills in the environment-dependent ones so the
//! echoed file is complete.

use std::f64::consts::PI;
use std::path::Path;

use scrm_core::diagnostics::{DISTANCE_GRID, SIGMA_GRID};
use scrm_core::engine::{AlphaRule, LambdaRule, DEFAULT_CV_FOLDS, DEFAULT_EVAL_SAMPLES};
use scrm_core::env::{GaussianQuadratic, Potential, Pricing, RiskMode, SyntheticMultilabel};
use scrm_core::objective::{DEFAULT_DELTA, LAMBDA_GRID};
use scrm_core::policy::DEFAULT_WEIGHT_BOUND;
use scrm_core::{EnvSpec, Experiment, Family, Method, ModelParams, OptimizerConfig, PolicySpec, RolloutPlan};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub estimators: EstimatorStudyConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    GaussianQuadratic(GaussianQuadraticConfig),
    Pricing(PricingConfig),
    Potential(PotentialConfig),
    SyntheticMultilabel(MultilabelConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianQuadraticConfig {
    pub theta_star: f64,
    pub noise_std: f64,
}

impl Default for GaussianQuadraticConfig {
    fn default() -> Self {
        let g = GaussianQuadratic::default();
        Self {
            theta_star: g.theta_star,
            noise_std: g.noise_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingConfig {
    pub k: usize,
    pub l: usize,
    pub price_max: f64,
    pub noise_clip: f64,
}

impl Default for PricingConfig {
    fn default() -> Self {
        let p = Pricing::default();
        Self {
            k: p.k(),
            l: p.l(),
            price_max: p.price_max(),
            noise_clip: p.noise_clip(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialConfig {
    pub group_means: [f64; 2],
    pub group_std: f64,
    pub feature_noise: f64,
    pub potential_floor: f64,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        let p = Potential::default();
        Self {
            group_means: p.group_means,
            group_std: p.group_std,
            feature_noise: p.feature_noise,
            potential_floor: p.potential_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultilabelConfig {
    pub dim: usize,
    pub bits: usize,
    pub teacher_seed: u64,
    pub teacher_scale: f64,
}

impl Default for MultilabelConfig {
    fn default() -> Self {
        let m = SyntheticMultilabel::default();
        Self {
            dim: m.dim(),
            bits: m.bits(),
            teacher_seed: m.seed(),
            teacher_scale: m.teacher_scale(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Gaussian,
    Lognormal,
    Softmax,
}

impl From<Family> for FamilyName {
    fn from(f: Family) -> Self {
        match f {
            Family::GaussianLinear => FamilyName::Gaussian,
            Family::Lognormal => FamilyName::Lognormal,
            Family::SoftmaxKronecker => FamilyName::Softmax,
        }
    }
}

/// Omitted keys fall back to the environment's default policy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub family: Option<FamilyName>,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub action_bits: Option<usize>,
    pub intercept: Option<bool>,
    pub weight_bound: Option<f64>,
    pub theta0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRuleName {
    Theoretical,
    Fixed,
    CrossValidated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRuleName {
    InverseN,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Scrm,
    Crm,
}

impl From<MethodName> for Method {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::Scrm => Method::Scrm,
            MethodName::Crm => Method::Crm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub n0: usize,
    pub rollouts: usize,
    pub lambda_rule: LambdaRuleName,
    /// Used by the fixed rule.
    pub lambda: f64,
    /// Used by the cross-validated rule.
    pub lambda_candidates: Vec<f64>,
    pub cv_folds: usize,
    pub alpha_rule: AlphaRuleName,
    /// Used by the fixed rule.
    pub alpha: f64,
    pub pooled: bool,
    pub methods: Vec<MethodName>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            n0: 100,
            rollouts: 10,
            lambda_rule: LambdaRuleName::Theoretical,
            lambda: 0.0,
            lambda_candidates: LAMBDA_GRID.to_vec(),
            cv_folds: DEFAULT_CV_FOLDS,
            alpha_rule: AlphaRuleName::InverseN,
            alpha: 0.0,
            pooled: false,
            methods: vec![MethodName::Scrm, MethodName::Crm],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub delta: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub radius: f64,
    pub max_iters: usize,
    pub step_init: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub grad_tol: f64,
    pub restarts: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizerConfig::default();
        Self {
            radius: o.radius,
            max_iters: o.max_iters,
            step_init: o.step_init,
            armijo_c: o.armijo_c,
            shrink: o.shrink,
            grad_tol: o.grad_tol,
            restarts: o.restarts,
        }
    }
}

impl From<&OptimizerSection> for OptimizerConfig {
    fn from(o: &OptimizerSection) -> Self {
        OptimizerConfig {
            radius: o.radius,
            max_iters: o.max_iters,
            step_init: o.step_init,
            armijo_c: o.armijo_c,
            shrink: o.shrink,
            grad_tol: o.grad_tol,
            restarts: o.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Monte-Carlo size for test risks without a closed form.
    pub mc_samples: usize,
    /// Fixed draws for the full-information reference fit; 0 disables it
    /// and leaves excess risk empty.
    pub skyline_samples: usize,
    pub skyline_seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            mc_samples: DEFAULT_EVAL_SAMPLES,
            skyline_samples: 2000,
            skyline_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorStudyConfig {
    pub n: usize,
    pub replications: usize,
    pub shifts: Vec<f64>,
}

impl Default for EstimatorStudyConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            replications: 500,
            shifts: (0..5).map(|i| i as f64 * PI / 4.0).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Lambda,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub lambdas: Vec<f64>,
    pub delta0: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::Lambda,
            lambdas: LAMBDA_GRID.to_vec(),
            delta0: DISTANCE_GRID.to_vec(),
            sigmas: SIGMA_GRID.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn env_spec(&self) -> Result<EnvSpec, ConfigError> {
        let env = match &self.env {
            EnvConfig::GaussianQuadratic(g) => EnvSpec::GaussianQuadratic(GaussianQuadratic {
                theta_star: g.theta_star,
                noise_std: g.noise_std,
            }),
            EnvConfig::Pricing(p) => EnvSpec::Pricing(
                Pricing::new(p.k, p.l, p.price_max, p.noise_clip).map_err(|e| invalid("env", e.to_string()))?,
            ),
            EnvConfig::Potential(p) => EnvSpec::Potential(Potential {
                group_means: p.group_means,
                group_std: p.group_std,
                feature_noise: p.feature_noise,
                potential_floor: p.potential_floor,
            }),
            EnvConfig::SyntheticMultilabel(m) => EnvSpec::SyntheticMultilabel(
                SyntheticMultilabel::new(m.dim, m.bits, m.teacher_seed, m.teacher_scale)
                    .map_err(|e| invalid("env", e.to_string()))?,
            ),
        };
        env.validate().map_err(|e| invalid("env", e.to_string()))?;
        Ok(env)
    }

    pub fn policy_spec(&self, env: &EnvSpec) -> Result<PolicySpec, ConfigError> {
        let base = env.default_policy();
        let p = &self.policy;
        let family = p.family.unwrap_or_else(|| base.family.into());
        let same_family = FamilyName::from(base.family) == family;
        let mut spec = match family {
            FamilyName::Gaussian => PolicySpec::gaussian(1.0),
            FamilyName::Lognormal => PolicySpec::lognormal(1.0),
            FamilyName::Softmax => PolicySpec::softmax_kronecker(1, 0.0),
        };
        if same_family {
            spec = base;
        }
        if let Some(s) = p.sigma {
            spec.sigma = s;
        }
        if let Some(e) = p.epsilon {
            spec.epsilon = e;
        }
        if let Some(b) = p.action_bits {
            spec.action_bits = b;
        }
        if let Some(i) = p.intercept {
            spec.intercept = i;
        }
        spec.weight_bound = p.weight_bound.unwrap_or(DEFAULT_WEIGHT_BOUND);
        spec.validate().map_err(|e| invalid("policy", e.to_string()))?;
        Ok(spec)
    }

    pub fn plan(&self) -> Result<RolloutPlan, ConfigError> {
        let p = &self.plan;
        let lambda_rule = match p.lambda_rule {
            LambdaRuleName::Theoretical => LambdaRule::Theoretical,
            LambdaRuleName::Fixed => LambdaRule::Fixed(p.lambda),
            LambdaRuleName::CrossValidated => LambdaRule::CrossValidated {
                candidates: p.lambda_candidates.clone(),
                folds: p.cv_folds,
            },
        };
        let alpha_rule = match p.alpha_rule {
            AlphaRuleName::InverseN => AlphaRule::InverseN,
            AlphaRuleName::Fixed => AlphaRule::Fixed(p.alpha),
        };
        let plan = RolloutPlan {
            n0: p.n0,
            rollouts: p.rollouts,
            growth: 2,
            lambda_rule,
            alpha_rule,
            pooled: p.pooled,
        };
        plan.validate().map_err(|e| invalid("plan", e.to_string()))?;
        Ok(plan)
    }

    /// Builds the core experiment; `optimal_risk` is left to the caller for
    /// environments without a closed form.
    pub fn experiment(&self) -> Result<Experiment, ConfigError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.plan.methods.is_empty() {
            return Err(invalid("plan.methods", "at least one method is required"));
        }
        if self.evaluation.mc_samples == 0 {
            return Err(invalid("evaluation.mc_samples", "must be >= 1"));
        }
        let env = self.env_spec()?;
        let policy = self.policy_spec(&env)?;
        let theta0 = match &self.policy.theta0 {
            Some(t) => ModelParams::new(t.clone()).map_err(|e| invalid("policy.theta0", e.to_string()))?,
            None => env.default_logging_model(&policy),
        };
        let plan = self.plan()?;
        let mut exp = Experiment::new(env, policy, theta0, plan).map_err(|e| invalid("experiment", e.to_string()))?;
        exp.optimizer = (&self.optimizer).into();
        exp.delta = self.objective.delta;
        if !exp.env.has_closed_form() {
            exp.risk_mode = RiskMode::MonteCarlo(self.evaluation.mc_samples);
        }
        exp.validate().map_err(|e| {
            let field = match e {
                scrm_core::Error::InvalidConfig(ref m) if m.starts_with("optimizer") => "optimizer",
                scrm_core::Error::InvalidConfig(ref m) if m.starts_with("delta") => "objective.delta",
                _ => "experiment",
            };
            invalid(field, e.to_string())
        })?;
        Ok(exp)
    }

    /// Copy with every environment-dependent default written out.
    pub fn resolve(&self) -> Result<Self, ConfigError> {
        let exp = self.experiment()?;
        let mut out = self.clone();
        out.policy = PolicyConfig {
            family: Some(exp.policy.family.into()),
            sigma: Some(exp.policy.sigma),
            epsilon: Some(exp.policy.epsilon),
            action_bits: Some(exp.policy.action_bits),
            intercept: Some(exp.policy.intercept),
            weight_bound: Some(exp.policy.weight_bound),
            theta0: Some(exp.theta0.as_slice().to_vec()),
        };
        Ok(out)
    }
}

/// Parses `--seeds`: a comma list of integers or half-open ranges `a..b`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, ConfigError> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| invalid("--seeds", format!("bad range start in `{part}`")))?;
            let b: u64 = b.trim().parse().map_err(|_| invalid("--seeds", format!("bad range end in `{part}`")))?;
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| invalid("--seeds", format!("bad seed `{part}`")))?);
        }
    }
    if out.is_empty() {
        return Err(invalid("--seeds", "no seeds given"));
    }
    Ok(out)
}

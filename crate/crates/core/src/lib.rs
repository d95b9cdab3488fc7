//! Sequential counterfactual risk minimization.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece of
//! the simulator: parametric stochastic policies, synthetic logged-bandit
//! environments, off-policy risk and variance estimators, the
//! variance-penalized learning objective with its analytic gradient, a
//! projected first-order optimizer, the sequential (SCRM) and re-deployment
//! (CRM) rollout engines, and diagnostics used to validate all of the above.
//!
//! Randomness is always supplied by the caller, either as an explicit
//! [`rand::Rng`] or as a [`rng::Streams`] seed tree, so every result is a pure
//! function of its inputs.
#![no_std]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::result_large_err)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diagnostics;
pub mod engine;
pub mod env;
pub mod error;
pub mod estimators;
pub mod numeric;
pub mod objective;
pub mod optimizer;
pub mod policy;
pub mod rng;

pub use env::{ContextDraw, EnvSpec, Interaction};
pub use error::{Error, Result};
pub use estimators::{Batch, EstimatorConfig, EstimatorVariant, MisWeights};
pub use engine::{Experiment, Method, RolloutPlan, RolloutRecord, RunResult};
pub use objective::ObjectiveConfig;
pub use optimizer::OptimizerConfig;

pub use policy::{Action, Family, ModelParams, PolicySpec};

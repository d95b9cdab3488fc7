use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("action does not match the {0} family")]
    ActionMismatch(&'static str),
    #[error("action {0} lies outside the policy support")]
    OutOfSupport(f64),
    #[error("propensity {0:e} is below the representable floor 1e-300")]
    PropensityUnderflow(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("importance weights sum to zero")]
    DegenerateWeights,
    #[error("no closed-form risk for the {0} environment")]
    NoClosedForm(&'static str),
    #[error("non-finite {0} encountered")]
    NonFinite(&'static str),
    #[error("batch sizes must be equal (found {first} and {other})")]
    UnequalBatchSizes { first: usize, other: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("batch schedule overflows usize")]
    ScheduleOverflow,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

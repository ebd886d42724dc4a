use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("component index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("SVRG snapshot is stale: age {age} >= refresh period {period}")]
    StaleSnapshot { age: usize, period: usize },

    #[error("non-finite iterate at step {step}")]
    NonFinite { step: usize },

    #[error("iterate left the admissible ball of radius {radius} at step {step}")]
    LeftDomain { step: usize, radius: f64 },

    #[error("entry {index} must be strictly positive, got {value}")]
    NonPositive { index: usize, value: f64 },

    #[error("inequality violated: {0}")]
    InequalityViolated(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

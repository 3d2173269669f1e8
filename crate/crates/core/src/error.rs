use thiserror::Error;

/// Errors produced by the sampling and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: need at least {needed} values, have {have}")]
    InsufficientData { needed: usize, have: usize },

    /// The standard error of the mean is zero, so the t statistic is undefined.
    /// Callers decide by the sign of `lbar - mu0` instead.
    #[error("degenerate scale: standard error is zero")]
    DegenerateScale,

    #[error("log-likelihood difference at index {index} is not finite ({value})")]
    NonFiniteLogLik { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A stage with pi = 1 has no Gaussian transition; the decision there is exact.
    #[error("full-data stage has no random-walk transition")]
    FullDataStage,

    #[error("move {0} is not legal for the current model size")]
    IllegalMove(&'static str),

    #[error("no grid point satisfies the error budget {budget}; smallest achievable error is {min_error}")]
    InfeasibleDesign { budget: f64, min_error: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

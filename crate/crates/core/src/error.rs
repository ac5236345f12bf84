use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("probability at index {index} is {value}, expected a value in [0, 1]")]
    InvalidProbability { index: usize, value: f64 },

    #[error("valuation at index {index} is {value}, expected a positive finite value")]
    InvalidValuation { index: usize, value: f64 },

    #[error("target entry at index {index} is {value}, expected a value strictly inside (0, 1)")]
    InvalidTarget { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sampling plan produces no points")]
    EmptyPlan,

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("estimation undefined for users {users:?}: no idle slots observed")]
    EstimationUndefined { users: Vec<usize> },

    #[error("derivative not evaluable: {0}")]
    NonEvaluable(String),

    #[error("dynamics hypothesis violated: {0}")]
    HypothesisViolation(String),
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

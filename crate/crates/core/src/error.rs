use thiserror::Error;

/// Errors raised by the forecasting toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by its caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient data: need at least {required} time steps, got {available}")]
    InsufficientData { required: usize, available: usize },

    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(String),

    #[error("undefined metric {metric}: {reason}")]
    UndefinedMetric { metric: &'static str, reason: String },

    /// A loss or gradient became non-finite; `term` names the first offender.
    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    /// The finite-difference oracle was handed a non-deterministic loss.
    #[error("gradient oracle invalid: {0}")]
    OracleInvalid(String),

    #[error("alignment failure at index {index}: {reason}")]
    Alignment { index: usize, reason: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for numerical aborts (as opposed to contract or configuration errors).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::OracleInvalid(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

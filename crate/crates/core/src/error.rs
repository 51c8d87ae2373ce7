use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid distance pattern: {0}")]
    InvalidPattern(String),

    #[error("combinadic index {index} out of range for C({k}, {d})")]
    IndexOutOfRange { index: String, k: usize, d: usize },

    #[error("binomial table covers k <= {k_max}, requested {k}")]
    TableTooSmall { k_max: usize, k: usize },

    #[error("trial did not stop within {0} transmissions")]
    TransmissionLimit(usize),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        Error::InvariantViolation(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

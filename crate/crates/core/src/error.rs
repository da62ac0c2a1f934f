use thiserror::Error;

pub type Result<T> = std::result::Result<T, AwdError>;

#[derive(Debug, Error)]
pub enum AwdError {
    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("unknown filter bank `{0}` (expected one of haar, db5, sym5, coif2)")]
    UnknownBank(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("optimization diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("experiment precondition failed: {0}")]
    Precondition(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AwdError::Shape(msg.into()))
}

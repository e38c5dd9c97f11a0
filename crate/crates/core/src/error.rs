use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {rows} rows cannot populate {k} buckets")]
    InsufficientData { rows: usize, k: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("code {code} out of range for K = {k}")]
    CodeOutOfRange { code: usize, k: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("inconsistent model: {0}")]
    Consistency(String),

    #[error("invalid accelerator configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }
}

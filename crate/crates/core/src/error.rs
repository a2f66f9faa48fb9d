use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the domain of an operation (bad dimension, coincident
    /// camera and point, out-of-bounds pose, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Kernel system could not be factorized even after jitter escalation.
    #[error("numerical failure: {message} (final jitter {jitter:e})")]
    Numerical { message: String, jitter: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

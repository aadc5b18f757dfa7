use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, empty inputs).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A forward or backward pass produced a NaN or infinity.
    #[error("non-finite value at tape node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    /// Inconsistent or incomplete configuration.
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

use thiserror::Error;

/// A client frame that could not be turned into a command.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed command: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] foresight_core::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("session task failed: {0}")]
    Task(String),
}

pub type Result<T> = std::result::Result<T, ServiceError>;

use thiserror::Error;

/// Failure of a command, split by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config file, override or flag: exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Anything that went wrong while running: exit code 3.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<foresight_core::Error> for CliError {
    fn from(e: foresight_core::Error) -> Self {
        match e {
            foresight_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<foresight_service::ServiceError> for CliError {
    fn from(e: foresight_service::ServiceError) -> Self {
        use foresight_service::ServiceError as S;
        match e {
            S::Config(m) | S::Core(foresight_core::Error::Config(m)) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(format!("json error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv error: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

use thiserror::Error;

/// CLI failures, classified by exit code: 2 for data problems, 3 for
/// configuration problems, 4 for runtime (chain) failures.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 2,
            CliError::Config(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<rjmort::CoreError> for CliError {
    fn from(e: rjmort::CoreError) -> Self {
        match e {
            rjmort::CoreError::Data(msg) => CliError::Data(msg),
            rjmort::CoreError::InvalidConfig(msg) => CliError::Config(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

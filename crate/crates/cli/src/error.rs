use thiserror::Error;

/// Failures of a CLI run, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid parameters: {0}")]
    Validation(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Io { .. } | CliError::Internal(_) => 4,
        }
    }
}

impl From<dynprice::Error> for CliError {
    fn from(err: dynprice::Error) -> Self {
        use dynprice::Error::*;
        match err {
            // our own schedules are always well formed; anything else is a bug
            MalformedSchedule(_) | CapViolation { .. } => CliError::Internal(err.to_string()),
            _ => CliError::Validation(err.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

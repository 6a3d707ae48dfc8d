use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] multirep::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("unknown config key {0:?}")]
    UnknownKey(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    /// Stable prefix printed as `error[CODE]`.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Config(_) => "E_CONFIG",
            CliError::UnknownKey(_) => "E_CONFIG_KEY",
            CliError::Usage(_) => "E_USAGE",
            CliError::Io(_) => "E_IO",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

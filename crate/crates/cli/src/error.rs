use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::MissingInput(_) | CliError::EmptyInput(_) | CliError::InvalidInput(_) => 2,
            CliError::Io { .. } | CliError::Internal(_) => 1,
        }
    }

    pub fn invalid(what: impl std::fmt::Display) -> Self {
        CliError::InvalidInput(what.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

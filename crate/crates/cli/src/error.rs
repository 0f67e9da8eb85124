use std::path::Path;

use thiserror::Error;

use crate::config::ConfigErrors;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),

    /// Invalid command-line usage or incompatible inputs detected before compute.
    #[error("{0}")]
    Usage(String),

    /// Unreadable or malformed run artifacts.
    #[error("{0}")]
    Input(String),

    #[error("{0}")]
    Runtime(#[from] fairfl::Error),

    #[error("{0}")]
    Io(String),

    /// Names of the failed verification suites.
    #[error("verification failed: {}", .0.join(", "))]
    Verify(Vec<String>),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Input(_) | CliError::Runtime(_) | CliError::Io(_) => 3,
        }
    }
}

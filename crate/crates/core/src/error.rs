use thiserror::Error;

/// Errors raised by the numerical core and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A quantity such as `M - f` collapsed below the singularity guard.
    #[error("singular: {0}")]
    Singular(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    /// Dirichlet partitioning could not satisfy the minimum client size.
    #[error("partition exhausted after {retries} redraws (min_size {min_size})")]
    Exhausted { retries: usize, min_size: usize },

    #[error("client {client} has {count} samples, need at least {needed}")]
    TooFewSamples {
        client: usize,
        count: usize,
        needed: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

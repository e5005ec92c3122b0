use thiserror::Error;

/// Error type shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no ground state found: {0}")]
    NoGroundState(String),

    #[error("blow-up detected at t = {t}")]
    BlowUp { t: f64 },

    #[error("Newton iteration failed to converge: {0}")]
    NewtonDiverged(String),

    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl Error {
    /// Process exit code used by the CLI: 2 validation, 3 numerical, 4 hypothesis.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Serde(_) => 2,
            Error::Hypothesis(_) => 4,
            _ => 3,
        }
    }
}

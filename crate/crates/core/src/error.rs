use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Structurally malformed model (dimension mismatch, bad fractions, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported model for this operation: {0}")]
    Unsupported(String),

    /// Iterative method failed to reach the requested tolerance.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("integration error at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("state space has {states} states, above the cap of {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("all {0} replicates hit the event cap; raise the cap or use the QSD route")]
    AllTruncated(usize),

    #[error("model configuration: {0}")]
    Config(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numerical(_) | Error::Integration { .. } => 3,
            _ => 2,
        }
    }
}

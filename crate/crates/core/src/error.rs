use thiserror::Error;

use crate::game::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A set that had to be split contains an indivisible cell with positive mass.
    #[error("cell {cell} is atomic and carries positive mass")]
    AtomicMass { cell: usize },

    /// No selection of the candidate field reproduces the requested moments.
    #[error("no selection matches the target moments on coarse cell {coarse}")]
    NoSelection { coarse: usize },

    #[error("no convergence after {iterations} iterations (best epsilon {best_epsilon:.3e})")]
    NoConvergence { iterations: usize, best_epsilon: f64 },

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("parse error at {path} (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(ValidationReport),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

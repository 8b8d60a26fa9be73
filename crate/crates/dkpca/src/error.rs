use thiserror::Error;

/// Errors produced by the dkpca library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Rank-deficient input where full column rank is required (e.g. Stiefel
    /// projection). Callers may re-randomize and retry.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    /// An analytical precondition is violated (e.g. an eigenvalue shift that
    /// produces a negative spectrum).
    #[error("condition violated: {0}")]
    ConditionViolated(String),

    /// A query point has no kernel support among the training samples.
    #[error("no support: {0}")]
    NoSupport(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

//! Library-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VibeError {
    /// No usable words remain after stopword removal.
    #[error("empty-vocabulary")]
    EmptyVocabulary,

    /// Absolute-split cut points are not non-decreasing.
    #[error("bad-boundaries")]
    BadBoundaries,

    /// A retrieval index was requested over zero documents.
    #[error("empty-pool")]
    EmptyPool,

    /// Training hit a non-finite loss; state was rolled back to the last
    /// finite checkpoint.
    #[error("diverged")]
    Diverged,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VibeError>;

//! Crate-wide error type.

use crate::expectile::Coefficients;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An accumulated information matrix cannot be factorized, even after
    /// the one-time diagonal jitter retry. Typical cause: rank-deficient
    /// data, e.g. a first batch with fewer independent rows than columns.
    #[error("matrix is singular to working precision (column {col})")]
    SingularMatrix { col: usize },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    /// IRLS ran out of iterations. The last iterate is carried so the
    /// caller can decide whether to accept it anyway.
    #[error("IRLS did not converge after {iterations} iterations (last step {last_delta:.3e})")]
    NoConvergence {
        iterations: usize,
        last_delta: f64,
        last: Coefficients,
    },

    #[error("expectile level must lie strictly inside (0, 1), got {0}")]
    InvalidLevel(f64),

    #[error("batch has {n} rows, need at least {required}")]
    BatchTooSmall { n: usize, required: usize },

    /// Summary states are specific to one expectile level; mixing levels
    /// would silently corrupt the accumulated statistics.
    #[error("expectile level mismatch: state holds {state}, caller passed {given}")]
    LevelMismatch { state: f64, given: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported state format version {0}")]
    UnsupportedFormatVersion(u64),

    #[error("invalid state file: {0}")]
    BadStateFile(String),

    #[error("state file I/O: {0}")]
    Io(#[from] std::io::Error),

    #[error("state file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

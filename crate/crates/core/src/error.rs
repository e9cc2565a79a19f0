//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Two points (or a point and a kernel) disagree on coordinate count.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A coordinate fell outside the kernel's domain.
    #[error("coordinate {index} = {value} outside [0,1]")]
    OutOfDomain { index: usize, value: f64 },

    /// A kernel description fails its own invariants (non-positive width, etc).
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    /// An API contract was violated by the caller (e.g. out-of-order round index).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input data; `location` names the offending line or round.
    #[error("input error at {location}: {message}")]
    Input { location: String, message: String },

    /// Inconsistent or invalid run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

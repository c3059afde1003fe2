use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or settings that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced NaN or infinity.
    #[error("numerical fault: {0}")]
    NumericalFault(String),

    /// Data handed to a routine violates one of its structural invariants.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    /// The caller asked for something the callee cannot provide.
    #[error("invalid request: {0}")]
    Caller(String),

    /// A teacher was asked for an annotation it cannot produce.
    #[error("annotation unavailable: {0}")]
    AnnotationUnavailable(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn dim_mismatch(what: &str, expected: usize, got: usize) -> Error {
    Error::Config(format!("{what}: expected dimension {expected}, got {got}"))
}

use thiserror::Error;

use crate::geometry::Unit;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unit mismatch: expected {expected:?}, found {found:?}")]
    UnitMismatch { expected: Unit, found: Unit },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("graph is not connected")]
    Disconnected,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

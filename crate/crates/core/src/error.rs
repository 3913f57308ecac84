use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input data or parameters violate a documented invariant.
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// The exact-match frequency posterior has no matching sample for the query.
    #[error("undefined posterior: no sample equals the query point")]
    UndefinedPosterior,

    /// Malformed embedding file.
    #[error("embedding file: {0}")]
    EmbeddingFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}

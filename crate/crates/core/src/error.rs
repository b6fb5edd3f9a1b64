use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("loss {loss} lies outside the declared bound [-{bound}, {bound}]")]
    LossOutOfBounds { loss: f64, bound: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("label and prediction set kinds differ: {0}")]
    KindMismatch(&'static str),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("malformed probability vector: {0}")]
    InvalidProbabilities(String),

    #[error("quantile level {0} must lie in (0, 1)")]
    InvalidQuantileLevel(f64),

    #[error("quantile level {0} is not tracked by this model")]
    UntrackedQuantile(f64),

    #[error("controller used out of order: {0}")]
    Protocol(&'static str),

    #[error("stream source failed: {0}")]
    Source(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

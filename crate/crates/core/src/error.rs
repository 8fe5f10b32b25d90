use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the perturbation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is numerically singular")]
    SingularMatrix,

    #[error("condition number {0:.3e} exceeds the configured cap")]
    IllConditioned(f64),

    #[error("no matrix satisfying the constraints after {0} draws")]
    RetryBudget(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("noise bounds (v0={v0}, v1={v1}) invalid: v1 must exceed v0")]
    InvalidNoiseSpec { v0: f64, v1: f64 },

    #[error("column {0} is constant; there is no order to preserve")]
    ConstantColumn(usize),

    #[error("column {0} has zero variance")]
    ZeroVariance(usize),

    #[error("training data too small: need at least {need} rows, got {got}")]
    NotEnoughTrainingData { need: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("queries over {got} dimensions rejected: vertex enumeration is capped at {max}")]
    TooManyDimensions { got: usize, max: usize },

    #[error("malformed query: {0}")]
    MalformedQuery(String),

    #[error("mismatched secure conditions: {0}")]
    ThetaMismatch(String),

    #[error("upper-bound range holds {found} points, fewer than k = {k}")]
    NeedLargerUpperBound { found: usize, k: usize },

    #[error("record envelope failed to decrypt")]
    EnvelopeDecrypt,

    #[error("record envelope malformed")]
    EnvelopeFormat,

    #[error("whitening failed: usable rank {rank}")]
    WhiteningFailure { rank: usize },

    #[error("unsupported operator {0} in a simple condition")]
    UnsupportedOperator(String),
}

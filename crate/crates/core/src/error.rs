use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input matrix is not symmetric: |A[{row},{col}] - A[{col},{row}]| = {diff:e}")]
    AsymmetricInput { row: usize, col: usize, diff: f64 },

    #[error("bandwidth {k} out of range for dimension {n} (must be at most n - 1)")]
    BandwidthOutOfRange { k: usize, n: usize },

    #[error("matrix is not positive definite (pivot {pivot_index} is non-positive or non-finite)")]
    NotPositiveDefinite { pivot_index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("inputs must be strictly increasing (gap {gap:e} at index {index})")]
    DuplicatePoints { index: usize, gap: f64 },

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("observations have zero variance")]
    ZeroVariance,

    #[error("test targets are constant; NMSE is undefined")]
    ConstantTarget,

    #[error("predictive covariance already includes observation noise")]
    AlreadyNoised,

    #[error("dense check limited to {limit} points, got {got}")]
    TooLargeForDenseCheck { limit: usize, got: usize },

    #[error("positive definiteness lost during training at iteration {iteration} (pivot {pivot_index})")]
    PdFailure { iteration: usize, pivot_index: usize },

    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

use thiserror::Error;

/// Errors raised across the policy, optimizer and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {samples} samples for {k} components")]
    InsufficientData { samples: usize, k: usize },
    #[error("degenerate component {component}: condition number {condition:e}")]
    DegenerateComponent { component: usize, condition: f64 },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("update out of bounds: entry {index} = {value} exceeds bound {bound}")]
    OutOfBounds { index: usize, value: f64, bound: f64 },
    #[error("rotation update requires 3-D state (dim_s = {0})")]
    RotationDim(usize),
    #[error("rank1 update rejected: component {0} lost positive definiteness")]
    Rank1Rejected(usize),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("budget {budget} is smaller than episodes per evaluation {per_eval}")]
    Budget { budget: usize, per_eval: usize },
    #[error("expert failed: {0}")]
    ExpertFailed(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

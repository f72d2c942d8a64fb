use thiserror::Error;

/// Errors produced by the learning, perception and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid warp path: {0}")]
    InvalidPath(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("matrix is not positive definite even after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate amplitude in dimension {dim}: |g - x0| = {amplitude:e}")]
    DegenerateAmplitude { dim: usize, amplitude: f64 },
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("dataset is missing class {0}")]
    MissingClass(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("missing model: {0}")]
    MissingModel(String),
    #[error("homogeneous coordinate too close to zero ({0:e})")]
    AtInfinity(f64),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

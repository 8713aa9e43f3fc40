use thiserror::Error;

#[derive(Debug, Error)]
pub enum HstError {
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("leaf capacity must be at least 1")]
    InvalidCapacity,
    #[error("coordinate ({x}, {y}) lies outside the tree bounding square")]
    OutOfBounds { x: f64, y: f64 },
    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("backward already ran on this graph; reset before calling it again")]
    BackwardTwice,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("training diverged at epoch {epoch}: loss is NaN")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HstError>;

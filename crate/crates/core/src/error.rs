use thiserror::Error;

/// Errors raised by the library. Invariant violations of a model are not
/// errors; they are collected by [`crate::model::validate_model`].
#[derive(Debug, Error)]
pub enum BlessError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range (0..{len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("enumeration guard exceeded: p*log2(d) = {bits:.2} > {limit}")]
    SizeGuard { bits: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BlessError>;

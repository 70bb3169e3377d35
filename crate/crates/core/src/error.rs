use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum NbbError {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bandwidth selection failed: degenerate sample")]
    DegenerateSample,

    #[error("k exceeds sample size (k = {k}, N = {n})")]
    KExceedsSampleSize { k: usize, n: usize },

    #[error("insufficient converged ridge points: need {needed}, have {available} (short by {})", needed - available)]
    InsufficientRidgePoints { needed: usize, available: usize },

    #[error("insufficient fiber sample: need at least 3 coordinate rows, got {0}")]
    InsufficientFiberSample(usize),

    #[error("too many bootstrap replicates discarded: {discarded} of {total}")]
    TooManyDiscards { discarded: usize, total: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl NbbError {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            NbbError::InvalidData(_) => "data",
            NbbError::InvalidParameter(_) => "usage",
            NbbError::DegenerateSample => "bandwidth",
            NbbError::KExceedsSampleSize { .. } => "usage",
            NbbError::InsufficientRidgePoints { .. } => "ridge",
            NbbError::InsufficientFiberSample(_) => "fiber",
            NbbError::TooManyDiscards { .. } => "bootstrap",
            NbbError::Parse { .. } => "parse",
            NbbError::Io(_) => "io",
            NbbError::Csv(_) => "io",
            NbbError::Json(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, NbbError>;

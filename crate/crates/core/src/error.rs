use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DialError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DialError {
    #[error("invalid label value {0} (expected 0..=6 or 255)")]
    InvalidLabel(u8),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("degenerate dimensions {width}x{height}: {reason}")]
    DegenerateDimensions {
        width: usize,
        height: usize,
        reason: String,
    },

    #[error("slide mismatch: expected `{expected}`, got `{actual}`")]
    SlideMismatch { expected: String, actual: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unreachable necrosis ratio target: {0}")]
    UnreachableTarget(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("no labeled pixels")]
    NoLabeledPixels,

    #[error("all class counts are zero")]
    ZeroCounts,

    #[error("cannot split by case: {0}")]
    Split(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("round state violation: {0}")]
    RoundState(String),

    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },

    #[error("no eligible cases: {0}")]
    NoEligibleCases(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("png: {0}")]
    Png(String),
}

impl DialError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DialError::Io {
            path: path.into(),
            source,
        }
    }
}

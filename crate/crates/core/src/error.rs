use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the rendering, training and evaluation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("tape has not been evaluated since its inputs changed")]
    NotEvaluated,

    #[error("point is behind the camera (camera-frame depth {depth})")]
    PointBehindCamera { depth: f64 },

    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("invalid depth bounds: near {near} must be below far {far}")]
    InvalidBounds { near: f64, far: f64 },

    #[error("negative density {value} at sample {index}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("no source view sees the query point")]
    NoValidViews,

    #[error("dataset has no usable training scenes")]
    EmptyDataset,

    #[error("split `{0}` has no frames to evaluate")]
    EmptySplit(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o failure on {path}: {message}")]
    IoFailure { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::IoFailure {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

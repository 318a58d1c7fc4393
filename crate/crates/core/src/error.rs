//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/layer shape disagreement; names the operation and both shapes.
    #[error("{op}: shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    /// Configuration the operation does not support (e.g. pool window != 2).
    #[error("{op}: unsupported configuration: {detail}")]
    Unsupported { op: &'static str, detail: String },

    /// Parameter outside its documented domain.
    #[error("{op}: invalid parameter: {detail}")]
    InvalidParam { op: &'static str, detail: String },

    /// Binarization found no pixel at or above the threshold.
    #[error("empty foreground: no pixel at or above threshold {threshold}")]
    EmptyForeground { threshold: u8 },

    /// Threshold segmentation produced a mask with no set bits.
    #[error("empty mask after thresholding at {threshold}")]
    EmptyMask { threshold: u8 },

    /// Input data failed validation (CSV rows, one-hot targets, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// Weights file is malformed (bad magic, version, or truncation).
    #[error("weights file: {0}")]
    WeightsFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn param(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidParam {
            op,
            detail: detail.into(),
        }
    }
}

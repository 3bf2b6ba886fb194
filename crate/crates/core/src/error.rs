use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("palette has {0} entries; indexed PNG holds at most 256")]
    UnsupportedPalette(usize),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("index {index} out of range for a palette of {size} colors")]
    IndexOutOfRange { index: u32, size: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to ingest {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("requested {requested} images per class but the smallest class has {available}")]
    OversizedSubset { requested: usize, available: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("png encoding failed: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error("png decoding failed: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("manifest parse error: {0}")]
    Manifest(String),
}

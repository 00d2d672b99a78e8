//! Dataset manifests, image ingestion, augmentation and batching.

mod augment;
mod batch;
mod image_io;
mod manifest;
pub mod synth;

pub use augment::{augment_train, pad_and_crop, resize_bilinear, AugmentConfig, Normalization};
pub use batch::{epoch_batches, make_batches, Batch};
pub use image_io::{load_image, save_ppm};
pub use manifest::{load_manifest, parse_manifest, DatasetManifest, LoadedSplit, Sample, Split};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: String,
        line: u64,
        message: String,
    },
    #[error("manifest has no data rows")]
    Empty,
    #[error("duplicate image path {0}")]
    DuplicatePath(String),
    #[error("{path}: unsupported image format (expected binary P5 or P6)")]
    UnsupportedImage { path: String },
    #[error("{path}: {message}")]
    BadImage { path: String, message: String },
    #[error("invalid batching: {0}")]
    Batching(String),
    #[error("invalid augmentation: {0}")]
    Augment(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("RLE counts sum to {got}, expected width*height = {expected}")]
    RleLength { expected: usize, got: usize },
    #[error("stability score {0} outside [0, 1]")]
    Stability(f64),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("crop size {crop} exceeds image size {width}x{height}")]
    CropTooLarge {
        crop: usize,
        width: usize,
        height: usize,
    },
    #[error("non-finite loss at iteration {iter}: {value}")]
    NonFiniteLoss { iter: usize, value: f64 },
    #[error("probability map not normalized at pixel ({x}, {y}): channel sum {sum}")]
    Unnormalized { x: usize, y: usize, sum: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

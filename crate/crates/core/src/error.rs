//! Crate-wide error type.
//!
//! Every error carries a stable machine-readable class name (see
//! [`Error::class`]) that the CLI prints on failure and the FFI layer maps to
//! status codes.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Helper for I/O errors that records the offending path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable error class, used by the CLI's one-line error
    /// output and by the FFI status mapping.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidPose(_) => "invalid_pose",
            Error::InvalidMask(_) => "invalid_mask",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::Config(_) => "config",
            Error::Dataset(_) => "dataset",
            Error::Checkpoint(_) => "checkpoint",
            Error::Training(_) => "training",
            Error::Metric(_) => "metric",
            Error::Numerical(_) => "numerical",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    DomainError { op: &'static str, detail: String },

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("style stage mismatch: expected stage {expected}, got {got}")]
    StageMismatch { expected: usize, got: usize },

    #[error("centroid class count {centroids} does not match prediction map class count {map}")]
    CentroidMismatch { centroids: usize, map: usize },

    #[error("step {step} outside schedule range [0, {max_step}]")]
    StepOutOfRange { step: usize, max_step: usize },

    #[error("objective returned a non-finite value at probe coordinate {coordinate}")]
    NonFiniteProbe { coordinate: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }

    /// True for errors caused by user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

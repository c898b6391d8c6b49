use std::io;

use thiserror::Error;

/// Every failure the library can report. The `Display` form always starts
/// with a stable, machine-parsable category (`shape-mismatch`, `corrupt-file`, ...).
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty-vector")]
    EmptyVector,
    #[error("bad-label: {label} not in 0..{classes}")]
    BadLabel { label: usize, classes: usize },
    #[error("bad-class: {class} not in 0..{classes}")]
    BadClass { class: usize, classes: usize },
    #[error("shape-mismatch: {0}")]
    ShapeMismatch(String),
    #[error("nonfinite-function: {0}")]
    NonFiniteFunction(f64),
    #[error("no-training-data")]
    NoTrainingData,
    #[error("no-test-data")]
    NoTestData,
    #[error("bad-config: {0}")]
    BadConfig(String),
    #[error("corrupt-file: {0}")]
    CorruptFile(String),
    #[error("unsupported-version: {0}")]
    UnsupportedVersion(u32),
    #[error("manifest-not-found: {0}")]
    ManifestNotFound(String),
    #[error("duplicate-id: {0}")]
    DuplicateId(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// The bare category string, without any detail.
    pub fn category(&self) -> &'static str {
        match self {
            Error::EmptyVector => "empty-vector",
            Error::BadLabel { .. } => "bad-label",
            Error::BadClass { .. } => "bad-class",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::NonFiniteFunction(_) => "nonfinite-function",
            Error::NoTrainingData => "no-training-data",
            Error::NoTestData => "no-test-data",
            Error::BadConfig(_) => "bad-config",
            Error::CorruptFile(_) => "corrupt-file",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::ManifestNotFound(_) => "manifest-not-found",
            Error::DuplicateId(_) => "duplicate-id",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("empty label sequence")]
    EmptyLabels,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("segment tiling violation at timestep {at}: {kind}")]
    TilingViolation { at: usize, kind: String },

    #[error("class index {index} out of range for vocabulary of size {size}")]
    ClassOutOfRange { index: usize, size: usize },

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("missing features: {}", .0.join(", "))]
    MissingFeatures(Vec<String>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("vocabulary/direction mismatch: {0}")]
    VocabMismatch(String),

    #[error("label transition error for object {object_id}: {reason}")]
    BadTransition { object_id: String, reason: String },

    #[error("missing objects: {}", .0.join(", "))]
    MissingObjects(Vec<String>),

    #[error("bundle format error: {0}")]
    BundleFormat(String),

    #[error("checksum mismatch: file is corrupt or truncated")]
    ChecksumMismatch,

    #[error("training diverged at iteration {iteration}: {diagnostics}")]
    NonFiniteLoss { iteration: usize, diagnostics: String },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    IoPath {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

/// Errors produced by the quality-indicator pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("dataset too small: {n} points (at least 2 required)")]
    DatasetTooSmall { n: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("bad format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("dataset fingerprint mismatch: container has {stored}, dataset has {actual}")]
    FingerprintMismatch { stored: String, actual: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Coarse classification used by front ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::DatasetTooSmall { .. }
            | Error::InvalidData(_)
            | Error::DimensionMismatch { .. }
            | Error::Domain(_)
            | Error::Format { .. }
            | Error::Integrity(_)
            | Error::FingerprintMismatch { .. }
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Image(_) => ErrorKind::Data,
            Error::Json(_) => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Internal,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}, row {row}: {detail}")]
    Row {
        path: String,
        row: usize,
        detail: String,
    },

    #[error("non-finite value in {block}: {detail}")]
    NonFinite { block: String, detail: String },

    #[error("model file format error: {0}")]
    Format(String),

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("model file integrity check failed: {0}")]
    Integrity(String),

    #[error("empty output path")]
    EmptyPath,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Json(_) => ErrorKind::Config,
            Error::Shape { .. }
            | Error::Data(_)
            | Error::Row { .. }
            | Error::Csv(_)
            | Error::Format(_)
            | Error::Version { .. }
            | Error::Integrity(_) => ErrorKind::Data,
            Error::NonFinite { .. } => ErrorKind::Numeric,
            Error::EmptyPath | Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read image {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },
    #[error("unsupported image format: {0}")]
    Format(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("mask error: {0}")]
    Mask(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("spec error: {0}")]
    Spec(String),
    #[error("integrity error in `{field}`: {reason}")]
    Integrity { field: String, reason: String },
    #[error("non-finite loss in term `{term}` at step {step}")]
    NonFinite { term: String, step: u64 },
    #[error("transport error after {attempts} attempt(s): {reason}")]
    Transport { attempts: u32, reason: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn integrity(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Integrity {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

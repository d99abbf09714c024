use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation (non-positive box,
    /// shape mismatch, non-increasing frame index, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed, e.g. a singular innovation covariance.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("key mismatch: {0}")]
    KeyMismatch(String),

    #[error("missing embeddings: {0}")]
    MissingEmbeddings(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parsable category, used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
            Error::Parse { .. } | Error::Json(_) => "parse",
            Error::KeyMismatch(_) => "key-mismatch",
            Error::MissingEmbeddings(_) => "missing-embeddings",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backends::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("generation failed: {0}")]
    Generation(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, err: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend(_))
    }
}

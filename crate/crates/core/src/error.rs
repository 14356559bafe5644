use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the detector, its training driver and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied data violates a precondition (dimensions, ranges, labels).
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration value is outside its documented range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Training could not produce a usable stage.
    #[error("training failed at {stage}: {message}")]
    Training { stage: String, message: String },

    #[error(transparent)]
    Model(#[from] LoadError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Text formats (manifests, detection files, PGM headers).
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Distinct failure classes when reading a model file.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("malformed model file: {0}")]
    Parse(String),

    #[error("unsupported model format {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("SURF pool hash mismatch: file has {found}, built-in pool is {expected}")]
    PoolHash { found: String, expected: String },

    #[error("model invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn training(stage: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Training {
            stage: stage.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed an argument outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A computation produced (or was fed) a non-finite value.
    #[error("non-finite value in {location}")]
    Numeric { location: String },

    /// Input data violates a structural contract (alignment, length budget, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A persisted file is malformed or has an unsupported version.
    #[error("format error: {0}")]
    Format(String),

    /// A tensor has a shape different from the one the model configuration requires.
    #[error("shape mismatch for tensor `{tensor}`: expected {expected:?}, found {found:?}")]
    Shape {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    /// Correlation is undefined because one coordinate has zero variance.
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

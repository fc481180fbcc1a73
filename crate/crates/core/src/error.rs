use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameters that can never be valid, detected before any work starts.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data that does not satisfy a precondition.
    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure in {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 data, 2 config, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::Io { .. } => 1,
            Error::Config(_) => 2,
            Error::Numeric { .. } => 3,
        }
    }
}

//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad model/attack/train settings or an unknown key.
    #[error("configuration error: {0}")]
    Config(String),

    /// Layer input does not match what the layer expects.
    #[error("shape mismatch at layer {layer}: {message}")]
    Shape { layer: usize, message: String },

    /// Invalid argument to an operation (bad label row, severity out of range, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Operation called in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    /// A loss or gradient became NaN/Inf.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed or inconsistent data file.
    #[error("data error in {path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Shape { .. } | Error::Input(_) | Error::State(_) => 2,
            Error::Data { .. } | Error::Io { .. } => 3,
            Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

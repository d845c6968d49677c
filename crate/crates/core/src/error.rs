//! Error types shared across the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error with a coarse category used for CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad flag values, inconsistent dimensions, ...).
    #[error("config error: {0}")]
    Config(String),
    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),
    /// Numerical failure (singular system, non-finite values, ...).
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error category: 2 config, 3 data/io, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn data_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Data(msg.into()))
}

pub(crate) fn numerical_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numerical(msg.into()))
}

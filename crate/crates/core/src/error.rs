use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("training error: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    /// True for errors caused by bad input data rather than bad settings or
    /// runtime failures.
    pub fn is_data_error(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Format { .. } | Error::Io(_))
    }

    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parameter(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

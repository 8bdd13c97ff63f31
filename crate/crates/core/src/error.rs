use std::io;

use thiserror::Error;

/// Errors produced across the library.
///
/// An empty detection (no text foreground in a map) is not an error; the
/// decoding functions signal it with `Ok(None)`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("placement failed: {0}")]
    Placement(String),

    #[error("pipeline error for proposal {proposal}: {message}")]
    Pipeline { proposal: String, message: String },

    #[error("document error: {0}")]
    Document(String),
}

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }

    pub(crate) fn geometry(message: impl Into<String>) -> Self {
        Error::Geometry(message.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

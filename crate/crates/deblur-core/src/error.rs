//! Error taxonomy shared by the whole crate.
//!
//! The variants mirror the CLI exit-code contract: configuration/usage
//! problems, I/O and container-format problems, and numeric failures
//! (non-finite values, failed checks).

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid shapes, channel counts, or option values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Filesystem-level failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed tensor/model container, with the byte offset at which
    /// decoding failed.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Image decode/encode failure.
    #[error("image error on {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    /// Non-finite values or a failed numeric check.
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI contract: 1 usage, 2 i/o, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. } | Error::Format { .. } | Error::Image { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }
}

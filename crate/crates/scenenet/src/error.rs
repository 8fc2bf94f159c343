//! Error type shared across the crate.

use std::fmt;
use std::io;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensors, layers, builders and the training harness.
#[derive(Debug)]
pub enum Error {
    /// Shapes or axes do not line up for the requested operation.
    Dimension(String),
    /// A declarative configuration is invalid or names unsupported values.
    Config(String),
    /// An input value is outside its documented domain.
    Validation(String),
    /// A non-finite value surfaced during training; names the first
    /// offending layer when it can be located.
    NonFinite { layer: String },
    /// File contents do not match the expected on-disk format.
    Format(String),
    /// Wrapped I/O failure, with the path that triggered it.
    Io { path: String, source: io::Error },
}

impl Error {
    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::NonFinite { layer } => {
                write!(f, "non-finite value detected; first offending layer: {layer}")
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

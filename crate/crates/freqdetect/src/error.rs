use std::fmt;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Tensor/layer/image shape incompatibility.
    Shape(String),
    /// Unknown or missing layer name; carries the valid names.
    UnknownLayer { name: String, valid: Vec<String> },
    /// Malformed or inconsistent configuration.
    Config(String),
    /// Dataset construction or ingestion failure.
    Data(String),
    /// Non-finite value encountered during a numeric computation.
    NonFinite(String),
    /// Serialization / file-format violation.
    Format(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::UnknownLayer { name, valid } => {
                write!(f, "unknown layer '{name}', valid layers: {}", valid.join(", "))
            }
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

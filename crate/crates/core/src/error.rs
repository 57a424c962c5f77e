use std::io;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("data: {0}")]
    Data(String),
    #[error("parse: line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("invariant: {0}")]
    Invariant(String),
    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-parseable category used in CLI stderr lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Data(_) => "data",
            Error::Parse { .. } => "parse",
            Error::Protocol(_) => "protocol",
            Error::Invariant(_) => "invariant",
            Error::UnsupportedKernel(_) => "kernel",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 2 for configuration errors, 3 for runtime/data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnsupportedKernel(_) => 2,
            _ => 3,
        }
    }
}

use std::path::PathBuf;

/// Errors raised by the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violates an operation's input contract (wrong length,
    /// out-of-range label, zero direction, ...).
    #[error("rejected input: {0}")]
    InvalidInput(String),

    /// A configuration value is outside its valid domain.
    #[error("rejected configuration: {0}")]
    InvalidConfig(String),

    /// A caller-side precondition does not hold.
    #[error("contract violated: {0}")]
    Contract(String),

    /// A file could not be parsed; `offset` is a byte offset into it.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Model layer shapes do not chain.
    #[error("shape error in layer {layer}: {message}")]
    Shape { layer: usize, message: String },

    /// A study had nothing left to aggregate.
    #[error("empty study: {0}")]
    EmptyStudy(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse { offset, message: message.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

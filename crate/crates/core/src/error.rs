//! Crate-wide error type.
//!
//! One enum covers every module so results compose without conversion
//! boilerplate. The CLI maps variants onto process exit codes: usage-class
//! errors (Shape, Config, Domain, Index, Usage) exit 1, data errors
//! (Format, Io) exit 2, and numerical failures (NonFinite) exit 3.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for an operation.
    #[error("{op}: shape mismatch: {details}")]
    Shape { op: &'static str, details: String },

    /// A configuration value is out of its documented range.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric argument is outside the mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An index (e.g. a class label) is out of bounds.
    #[error("index error: {0}")]
    Index(String),

    /// An API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// A data file does not match its documented byte format.
    #[error("format error in {path} at byte {offset}: {what}")]
    Format {
        path: PathBuf,
        offset: u64,
        what: String,
    },

    /// An underlying I/O operation failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Training produced a non-finite loss or gradient.
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: String,
        epoch: usize,
        batch: usize,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, offset: u64, what: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            what: what.into(),
        }
    }

    /// Exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape { .. }
            | Error::Config(_)
            | Error::Domain(_)
            | Error::Index(_)
            | Error::Usage(_) => 1,
            Error::Format { .. } | Error::Io { .. } => 2,
            Error::NonFinite { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

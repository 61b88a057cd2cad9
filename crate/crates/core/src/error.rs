use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid dimension {0}: coupling blocks need at least 2 inputs")]
    InvalidDimension(usize),

    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGradient { index: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in block {block} while evaluating the log-likelihood")]
    Likelihood { block: usize },

    #[error("numerical Jacobian oracle failed: {0}")]
    OracleFailure(String),

    #[error("ensemble member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate measurement: all raw band responses are zero")]
    DegenerateMeasurement,

    #[error("degenerate PCA: {0}")]
    DegeneratePca(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: String, supported: u32 },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Shape {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn member(member: usize, source: Error) -> Self {
        Error::Member {
            member,
            source: Box::new(source),
        }
    }

    pub fn row(row: usize, source: Error) -> Self {
        Error::Row {
            row,
            source: Box::new(source),
        }
    }

    /// True for errors caused by bad input from the caller (CLI exit code 2).
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Usage(_) => true,
            Error::Member { source, .. } | Error::Row { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

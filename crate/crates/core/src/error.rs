use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EtmaError>;

#[derive(Debug, Error)]
pub enum EtmaError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range for {what} of size {bound}")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at {source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: expected {expected}, found {found}")]
    Format { expected: String, found: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("incompatible artifact: {0}")]
    Compatibility(String),
}

impl EtmaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EtmaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        EtmaError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            EtmaError::Numeric(_) => 3,
            EtmaError::Compatibility(_) => 4,
            _ => 2,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Each variant maps onto one of the CLI exit codes through [`Error::exit_code`]:
/// configuration problems are usage errors (1), anything wrong with files on disk
/// is a data error (2), and failures of the numerics are numerical errors (3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate triple in {split} split: {head}\t{relation}\t{tail}")]
    DuplicateTriple {
        split: String,
        head: String,
        relation: String,
        tail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::DuplicateTriple { .. }
            | Error::Checkpoint(_)
            | Error::VocabMismatch(_) => 2,
            Error::Sampling(_) | Error::Numerical(_) => 3,
        }
    }
}

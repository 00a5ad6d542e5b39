use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("need at least {k} rows to seed {k} centroids, got {rows}")]
    TooFewRows { rows: usize, k: usize },

    #[error("conjugate gradient did not converge for column {column}: relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged {
        column: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("invalid weight between nodes {u} and {v}: {weight}")]
    InvalidWeight { u: usize, v: usize, weight: f64 },

    #[error("{0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

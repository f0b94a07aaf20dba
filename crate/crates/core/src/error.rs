use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes do not conform for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A precondition on the caller was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value that has to be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}:{line}: {message}")]
    Ingest {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{0}: no samples")]
    NoSamples(PathBuf),

    /// AUC on a single class, Pearson on a constant vector.
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("empty class: no samples predicted as class {0}")]
    EmptyClass(usize),

    #[error("numerical abort: {message} (epoch {epoch}, batch {batch})")]
    NumericalAbort {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

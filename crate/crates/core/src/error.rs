use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty domain: no active cells for parameter {0:?}")]
    EmptyDomain(Vec<f64>),

    #[error("cell is not cut by the interface")]
    NoInterface,

    #[error("singular matrix (pivot failure near row {row})")]
    SingularMatrix { row: usize },

    #[error("reduced system is singular for basis size {size}")]
    SingularReduced { size: usize },

    #[error("parameter {parameter:?} lies outside the parameter box")]
    OutOfRange { parameter: Vec<f64> },

    #[error("reference field has zero norm")]
    ZeroNorm,

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("high-fidelity solve failed at parameter {parameter:?}: {source}")]
    Solve {
        parameter: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

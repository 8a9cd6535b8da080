use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("face {face} has near-zero area {area:e}")]
    ZeroAreaFace { face: usize, area: f64 },

    #[error("duplicate points {0} and {1} collapse a neighborhood")]
    DuplicatePoints(usize, usize),

    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),

    #[error("eigensolver did not converge: {0}")]
    NotConverged(String),

    #[error("eigenvalue {index} is degenerate (relative gap {gap:e})")]
    DegenerateEigenvalue { index: usize, gap: f64 },

    #[error("shapes misclassified before the attack: {}", .0.join(", "))]
    Misclassified(Vec<String>),

    #[error("shape {id}: {source}")]
    Shape {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn for_shape(self, id: &str) -> Self {
        Error::Shape {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotConverged(_)
            | Error::Numerical(_)
            | Error::NotPositiveDefinite(_)
            | Error::DegenerateEigenvalue { .. } => true,
            Error::Shape { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

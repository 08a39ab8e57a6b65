use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A query whose coefficients are all zero has no sensitivity, so no
    /// noise scale can be derived for it.
    #[error("degenerate query: all coefficients are zero")]
    DegenerateQuery,

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The weighted Gram matrix of the history is singular (rank(H) < n).
    #[error("target is not estimable: history has rank {rank} < {cells} cells")]
    Estimability { rank: usize, cells: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("requested confidence {requested} exceeds attainable posterior mass {attainable}")]
    Coverage { requested: f64, attainable: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Shape {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

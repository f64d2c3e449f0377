use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not symmetric positive definite ({0})")]
    NotSpd(&'static str),

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("forward map evaluation failed: {0}")]
    Forward(String),

    #[error("{method} diverged at iteration {iter}: {reason}")]
    Divergence {
        method: String,
        iter: usize,
        reason: String,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}

/// Iterates whose Euclidean norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Rejects an iterate with a non-finite entry or a norm above
/// [`DIVERGENCE_NORM`].
pub fn check_iterate(method: &str, iter: usize, values: &[f64]) -> Result<()> {
    let reason = if values.iter().any(|x| !x.is_finite()) {
        "non-finite entry".to_string()
    } else {
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= DIVERGENCE_NORM {
            return Ok(());
        }
        format!("norm {norm:.3e} exceeds {DIVERGENCE_NORM:e}")
    };
    Err(Error::Divergence {
        method: method.to_string(),
        iter,
        reason,
    })
}

/// Rewrites a forward-map failure raised during an iteration as a
/// divergence of that iteration.
pub(crate) fn as_divergence(err: Error, method: &str, iter: usize) -> Error {
    match err {
        Error::Forward(reason) => Error::Divergence {
            method: method.to_string(),
            iter,
            reason,
        },
        other => other,
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

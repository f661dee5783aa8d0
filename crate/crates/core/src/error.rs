use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("activation `{0}` is not twice differentiable")]
    NonSmoothActivation(String),

    #[error("primitive `{0}` has no derivative rule")]
    UnsupportedPrimitive(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("invalid maze: {0}")]
    InvalidMaze(String),

    #[error("unknown maze `{0}`")]
    UnknownMaze(String),

    #[error("cell ({0}, {1}) is not a free cell")]
    NotFree(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("numerical abort at step {step}: {detail}")]
    NumericalAbort { step: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Fails with [`Error::NonFinite`] if any value is NaN or infinite.
pub fn ensure_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

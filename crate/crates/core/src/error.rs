use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape in {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("replay buffer not ready: holds {have} transitions, need {need}")]
    NotReady { have: usize, need: usize },

    #[error("states never visited in the rollout: {0:?}")]
    Coverage(Vec<usize>),

    #[error("no contiguous 3-cell {0} path for the selected unit")]
    ProbeSelection(&'static str),

    #[error("non-finite value at step {step}: {detail}")]
    NumericAbort { step: usize, detail: String },

    #[error("bad checkpoint {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

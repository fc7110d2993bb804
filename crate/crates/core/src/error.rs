use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("polyline needs at least 2 vertices, got {0}")]
    TooFewVertices(usize),

    #[error("polyline vertex {0} coincides with its successor")]
    RepeatedVertex(usize),

    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("optimization diverged at iteration {iteration} (loss {loss:e})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("region bin ({row}, {col}) contains no evidence")]
    NoEvidence { row: usize, col: usize },

    #[error("scene does not fit in the raster: {0}")]
    SceneOutOfBounds(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

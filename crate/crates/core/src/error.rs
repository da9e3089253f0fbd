use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("point {point:?} outside volume of dims {dims:?}")]
    OutOfBounds { point: [f64; 3], dims: [usize; 3] },

    #[error("no collision-free location found after {attempts} attempts")]
    PlacementExhausted { attempts: usize },

    #[error("tumor {index}: pinned center {center:?} collides with a vessel or tumor")]
    Collision { index: usize, center: [usize; 3] },

    #[error("synthesis failed: {0}")]
    SynthesisFailed(String),

    #[error("undefined metrics: {0}")]
    UndefinedMetrics(String),

    #[error("evaluation error: missing predictions for {}", missing.join(", "))]
    MissingPredictions { missing: Vec<String> },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Unsupported(_) => "unsupported",
            Error::Argument(_) => "argument",
            Error::GeometryMismatch(_) => "geometry",
            Error::OutOfBounds { .. } => "bounds",
            Error::PlacementExhausted { .. } => "placement-exhausted",
            Error::Collision { .. } => "collision",
            Error::SynthesisFailed(_) => "synthesis-failed",
            Error::UndefinedMetrics(_) => "undefined-metrics",
            Error::MissingPredictions { .. } => "evaluation",
            Error::Config(_) => "config",
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the decoder, trainer, and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{off_grid:.4} of the Gaussian mass lies outside the grid (limit 0.01)")]
    Truncation { off_grid: f64 },

    #[error("densities live on different grids")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate density at step {step}: unnormalized mass {mass:e}")]
    DegenerateDensity { step: usize, mass: f64 },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("posterior has no sampled trajectories")]
    MissingSamples,

    #[error("invalid simulation spec: {0}")]
    SpecInvalid(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite gradient after {retries} learning-rate halvings")]
    NonFiniteGradient { retries: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate triangle {index} (signed area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("no boundary facet carries marker {0}")]
    UnknownMarker(i32),

    #[error("nonpositive coefficient {value:e} on element {element}")]
    NonPositiveCoefficient { element: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("linear solve failed: {reason} (relative residual {residual:e})")]
    LinearSolve { reason: String, residual: f64 },

    #[error("nonpositive argument {value:e} to logarithm at node {node}")]
    NonPositiveLog { node: usize, value: f64 },

    #[error("unknown wavelength {0} nm")]
    UnknownWavelength(f64),

    #[error("no linearization point: {0}")]
    MissingState(&'static str),

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error("all {0} subproblems failed in one global iteration")]
    AllSubproblemsFailed(usize),

    #[error("{0} study run(s) failed")]
    RunsFailed(usize),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Whether the error comes from a numerical solver rather than from bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::LinearSolve { .. } | Error::AllSubproblemsFailed(_) | Error::RunsFailed(_) | Error::NonPositiveLog { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

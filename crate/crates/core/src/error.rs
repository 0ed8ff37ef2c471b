use thiserror::Error;

use crate::convex_regress::QcqpSolution;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown catalog function `{0}`")]
    UnknownFunction(String),

    /// A configured resource cap would be exceeded. Caps are never applied by
    /// silently truncating the work.
    #[error("resource cap exceeded: {what} needs {requested} but the cap is {cap}")]
    Resource {
        what: String,
        requested: f64,
        cap: f64,
    },

    /// The QCQP solver stopped at its iteration cap without certifying the
    /// requested duality gap. The best feasible iterate is attached.
    #[error(
        "solver failure after {iterations} iterations (certified gap {gap:e}, target {target:e})"
    )]
    SolverFailure {
        iterations: usize,
        gap: f64,
        target: f64,
        best: Box<QcqpSolution>,
    },

    /// Wraps an error with the pipeline stage that produced it.
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Strips any stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for resource-cap and solver errors (as opposed to bad input).
    pub fn is_resource_or_solver(&self) -> bool {
        matches!(
            self.root(),
            Error::Resource { .. } | Error::SolverFailure { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

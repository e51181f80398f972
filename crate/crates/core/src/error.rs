use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: String, reason: String },

    #[error("unknown built-in system `{0}` (expected duffing_sdof, cubic_3dof or tmd_5dof)")]
    UnknownSystem(String),

    #[error("path {path}: state became non-finite at step {step}")]
    Divergence { path: usize, step: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("column `{column}` evaluated to a non-finite value")]
    NonFiniteColumn { column: String },

    #[error("column `{column}` has zero variance and cannot be standardised")]
    DegenerateColumn { column: String },

    #[error("iteration {iter}: {what}")]
    Numerical { iter: usize, what: String },

    #[error("{equation}: {source}")]
    Equation {
        equation: String,
        #[source]
        source: Box<Error>,
    },

    #[error("discovery failed: {0}")]
    DiscoveryFailure(String),

    #[error("state {0} (x{n}) has no drift equation (neither regressed nor kinematic)", n = .0 + 1)]
    UncoveredState(usize),

    #[error("failure curves are on different time grids")]
    GridMismatch,

    #[error("config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Broad failure class, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: configuration, files, shapes.
    Config,
    /// The numerics failed: divergence, factorisation, degenerate data.
    Numerical,
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap with the label of the regression it came from, e.g. `drift[x2]`.
    pub fn in_equation(self, equation: impl Into<String>) -> Self {
        Error::Equation {
            equation: equation.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Divergence { .. }
            | Error::NonFiniteColumn { .. }
            | Error::DegenerateColumn { .. }
            | Error::Numerical { .. }
            | Error::DiscoveryFailure(_) => ErrorClass::Numerical,
            Error::Equation { source, .. } => source.class(),
            _ => ErrorClass::Config,
        }
    }
}

//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// A task or vector dimension was zero or inconsistent.
    InvalidDimension { dim: usize },
    /// A dataset size was zero or inconsistent.
    InvalidSize { n: usize },
    /// Two objects that must share a dimension do not.
    DimensionMismatch { expected: usize, got: usize },
    /// Requested perturbation width exceeds the dataset size.
    InvalidPerturbation { k: usize, n: usize },
    /// Task index outside the collection.
    TaskIndexOutOfRange { index: usize, m: usize },
    /// An adaptation batch was empty.
    EmptyBatch,
    /// Inner batch size exceeds the per-task sample count.
    BatchTooLarge { k: usize, n: usize },
    /// A weight vector is not a probability vector.
    InvalidWeights(String),
    /// An inner solve did not reach the requested gradient-mapping norm.
    NonConvergence { residual: f64 },
    /// A training iterate became non-finite.
    Divergence {
        round: usize,
        user: Option<usize>,
        local_step: Option<usize>,
    },
    /// Two collections handed to a coupled run are not a valid perturbation pair.
    StructuralMismatch(String),
    /// A stepsize/learning-rate premise required by a bound is violated.
    PremiseViolation(String),
    /// Overlap statistics requested but never recorded.
    OverlapNotRecorded,
    /// A closed-form density was requested for a degenerate distribution.
    DegenerateDensity(String),
    /// Not enough data points for a fit or report.
    InsufficientData(String),
    /// Invalid configuration value.
    InvalidConfig(String),
    Io(std::io::Error),
    /// A serialized file failed to parse.
    Parse { line: usize, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDimension { dim } => write!(f, "invalid dimension {dim}"),
            Error::InvalidSize { n } => write!(f, "invalid dataset size {n}"),
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::InvalidPerturbation { k, n } => {
                write!(f, "cannot perturb {k} of {n} inner samples")
            }
            Error::TaskIndexOutOfRange { index, m } => {
                write!(f, "task index {index} out of range for {m} tasks")
            }
            Error::EmptyBatch => write!(f, "adaptation batch is empty"),
            Error::BatchTooLarge { k, n } => {
                write!(f, "inner batch size {k} exceeds per-task sample count {n}")
            }
            Error::InvalidWeights(msg) => write!(f, "invalid weights: {msg}"),
            Error::NonConvergence { residual } => {
                write!(f, "inner solve stalled at gradient-mapping norm {residual:e}")
            }
            Error::Divergence {
                round,
                user,
                local_step,
            } => {
                write!(f, "non-finite iterate at round {round}")?;
                if let Some(u) = user {
                    write!(f, ", user {u}")?;
                }
                if let Some(s) = local_step {
                    write!(f, ", local step {s}")?;
                }
                Ok(())
            }
            Error::StructuralMismatch(msg) => write!(f, "collections do not match: {msg}"),
            Error::PremiseViolation(msg) => write!(f, "premise violation: {msg}"),
            Error::OverlapNotRecorded => write!(f, "overlap statistics were not recorded"),
            Error::DegenerateDensity(msg) => write!(f, "degenerate density: {msg}"),
            Error::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

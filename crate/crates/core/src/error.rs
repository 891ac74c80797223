//! Error type shared by every layer of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Unified error for state construction, measurement modeling,
/// reconstruction and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the domain of the operation it feeds.
    #[error("domain: {0}")]
    Domain(String),

    /// A state (or state spec) violates the uncertainty principle.
    #[error("physicality: {0}")]
    NonPhysical(String),

    /// Operation defined for single-mode states only.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Reflectivity 0 or 1 collapses the two-detector scheme onto a
    /// single quadrature projector.
    #[error("degenerate-unbalance: reflectivity {reflectivity} reduces to single homodyne detection")]
    DegenerateUnbalance { reflectivity: f64 },

    /// The closed-form prediction has no value at these parameters.
    #[error("out-of-model: {0}")]
    OutOfModel(String),

    /// No reflectivity solves the requested condition.
    #[error("no-solution: {0}")]
    NoSolution(String),

    /// Vector/matrix dimensions do not match.
    #[error("shape: expected length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    /// Temporal-mode support does not fit the requested segment.
    #[error("truncation: {0}")]
    Truncation(String),

    /// Leading covariance eigenvalue is not separated from the rest.
    #[error("ambiguous-mode: leading eigenvalue gap {gap:.3e} below threshold")]
    AmbiguousMode { gap: f64 },

    /// An operation received no data.
    #[error("empty-input: {0}")]
    EmptyInput(String),

    /// Point cloud has no two-dimensional extent.
    #[error("degenerate-cloud: {0}")]
    DegenerateCloud(String),

    /// Fitted variance at or below the vacuum unit; squeezing in dB is
    /// undefined. Signals insufficient statistics or a broken
    /// compensation convention.
    #[error("below-vacuum: fitted variance {lambda} leaves no signal above the vacuum unit")]
    BelowVacuum { lambda: f64 },

    /// Configuration document problem, with 1-based line number.
    #[error("config: {message} (line {line})")]
    Config { line: usize, message: String },

    /// Command-line usage problem.
    #[error("usage: {0}")]
    Usage(String),

    /// Self-test (povm equivalence) failed.
    #[error("verify-failed: {0}")]
    VerifyFailed(String),

    /// I/O failure, tagged with the path involved.
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File contents did not match the expected schema.
    #[error("format: {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    /// Stable machine-parsable class tag, the first token of the CLI's
    /// one-line error output.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::NonPhysical(_) => "physicality",
            Error::Unsupported(_) => "unsupported",
            Error::DegenerateUnbalance { .. } => "degenerate-unbalance",
            Error::OutOfModel(_) => "out-of-model",
            Error::NoSolution(_) => "no-solution",
            Error::ShapeMismatch { .. } => "shape",
            Error::Truncation(_) => "truncation",
            Error::AmbiguousMode { .. } => "ambiguous-mode",
            Error::EmptyInput(_) => "empty-input",
            Error::DegenerateCloud(_) => "degenerate-cloud",
            Error::BelowVacuum { .. } => "below-vacuum",
            Error::Config { .. } => "config",
            Error::Usage(_) => "usage",
            Error::VerifyFailed(_) => "verify-failed",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared across the crate.

use thiserror::Error;

/// Coarse classification used by callers (notably the CLI) to decide how a
/// failure should be reported: configuration problems are user-fixable
/// inputs, runtime problems are solver or sampling failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid or inconsistent configuration, data files, or parameters.
    Config,
    /// Failure while executing a numerically valid request.
    Runtime,
}

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{which} covariance is not symmetric positive definite")]
    NonPsdCovariance { which: String },

    #[error("boundedness violated: {detail}")]
    BoundednessViolated { detail: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("point lies outside the truncation ball: |x| = {norm:.6} > {radius:.6}")]
    OutsideSupport { norm: f64, radius: f64 },

    #[error("rejection sampling exceeded {attempts} attempts per draw; truncation ball too unlikely")]
    TruncationCapExceeded { attempts: usize },

    #[error("{which} sample must be nonempty")]
    EmptySample { which: String },

    #[error("{path}:{line}: {reason}")]
    Csv {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("{context} singular or not positive definite ({hint})")]
    SingularSystem { context: String, hint: String },

    #[error("target Fisher information is singular (smallest eigenvalue {min_eig:.3e})")]
    TargetFisherSingular { min_eig: f64 },

    #[error("optimizer failed to converge: gradient norm {grad_norm:.3e} after {iterations} iterations")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("grid too short for slope: need at least 2 usable points, got {got}")]
    GridTooShort { got: usize },

    #[error("slope undefined: all abscissae are equal")]
    DegenerateAbscissae,

    #[error("unknown estimator `{name}`; valid: {valid}")]
    UnknownEstimator { name: String, valid: String },

    #[error("output `{path}` already exists; pass --force to overwrite")]
    OutputExists { path: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the failure is a configuration problem or a runtime one.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonPsdCovariance { .. }
            | Error::BoundednessViolated { .. }
            | Error::DimensionMismatch { .. }
            | Error::EmptySample { .. }
            | Error::Csv { .. }
            | Error::Config { .. }
            | Error::GridTooShort { .. }
            | Error::UnknownEstimator { .. }
            | Error::OutputExists { .. }
            | Error::InvalidParam { .. } => ErrorClass::Config,
            Error::OutsideSupport { .. }
            | Error::TruncationCapExceeded { .. }
            | Error::SingularSystem { .. }
            | Error::TargetFisherSingular { .. }
            | Error::NonConvergence { .. }
            | Error::DegenerateAbscissae
            | Error::Io(_) => ErrorClass::Runtime,
        }
    }
}

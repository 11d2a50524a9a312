//! Error type shared by every module of the crate.
//!
//! Each variant corresponds to one failure family named in the module
//! contracts; the CLI maps families to process exit codes.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, PevoError>;

/// All recoverable failures produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PevoError {
    /// A scalar parameter lies outside its admissible domain (e.g. `h < 1`).
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),
    /// Objects that must share a grid (or a shape) do not.
    #[error("structural mismatch: {0}")]
    Structural(String),
    /// A numerical procedure failed (quadrature, eigen-solver, resolution).
    #[error("numerical failure: {0}")]
    Numeric(String),
    /// Coefficient or field evaluation produced a non-finite value.
    #[error("invalid input: {0}")]
    Input(String),
    /// Run configuration is malformed or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// The time integrator blew up.
    #[error("solver instability at t = {time:.6e}: norm {norm:.3e}")]
    Instability {
        /// Time of failure.
        time: f64,
        /// Norm that exceeded the blow-up threshold.
        norm: f64,
    },
    /// Constant tuning did not certify within the configured caps.
    #[error("tuning failure: {0}")]
    Tuning(String),
    /// The Neumann series for the inverse of `e^Λ` cannot be certified.
    #[error("inverse not certified: Neumann norm {norm:.4} ≥ {limit:.4}")]
    Certification {
        /// Measured operator norm of the remainder `r`.
        norm: f64,
        /// Certification threshold that was required.
        limit: f64,
    },
    /// Newton iteration diverged or ran out of iterations.
    #[error("Newton nonconvergence: {0}")]
    Nonconvergence(String),
    /// Filesystem or serialization failure while writing artifacts.
    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for PevoError {
    fn from(e: std::io::Error) -> Self {
        PevoError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for PevoError {
    fn from(e: serde_json::Error) -> Self {
        PevoError::Io(e.to_string())
    }
}

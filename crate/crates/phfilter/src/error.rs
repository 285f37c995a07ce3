//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A simulated state left the representable range, usually a bad `dt`.
    #[error("non-finite state at step {step}: {detail}")]
    NonFiniteState { step: usize, detail: String },

    /// A certificate value violated the Jensen floor `rho >= 1`.
    #[error("invalid certificate: rho_bar = {rho_bar} < 1")]
    InvalidCert { rho_bar: f64 },

    /// Every importance weight in a step was exactly zero; the step is
    /// flagged instead of silently resampled.
    #[error("all importance weights are zero at step {step}")]
    AllZeroWeights { step: usize },

    /// Coordinate descent did not reach the KKT tolerance.
    #[error("lasso did not converge after {sweeps} sweeps (kkt residual {residual:.3e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    /// Input shapes disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An oracle-bound check failed while its score gate passed.
    #[error("bound violation: {0}")]
    BoundViolation(String),

    /// Numeric assumption checks for a certificate diagnostic failed.
    #[error("assumption unmet: {0}")]
    AssumptionUnmet(String),

    /// Empty input where at least one element is required.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Configuration file problems.
    #[error("config error: {0}")]
    Config(String),

    /// I/O errors surfaced with their path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameter values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A state leaked population into the top truncation levels.
    #[error("truncation error: {0}")]
    Truncation(String),

    /// The floating-point precision in use cannot resolve the result.
    #[error(
        "precision error: cancellation ratio {ratio:.3e} exceeds the limit for \
         {bits}-bit arithmetic; retry with at least {suggested_bits} bits"
    )]
    Precision {
        /// Observed ratio of the largest partial sum to the final sum.
        ratio: f64,
        /// Mantissa bits of the arithmetic that failed.
        bits: u32,
        /// Suggested mantissa width for a retry.
        suggested_bits: u32,
    },

    /// A probability or trace underflowed the double-precision range.
    #[error("underflow: {context} (log-probability {log_prob:.6e})")]
    Underflow {
        /// What underflowed.
        context: String,
        /// Natural-log probability carried for the caller.
        log_prob: f64,
    },

    /// A numerical routine failed to converge or drifted out of tolerance.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An input violated an operation contract (wrong shape, non-Hermitian
    /// observable, non-PSD covariance, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Internal invariant breached; indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::Numeric(_) | Error::Precision { .. } | Error::Underflow { .. } => 3,
            Error::Truncation(_) => 4,
            Error::Internal(_) => 70,
        }
    }
}

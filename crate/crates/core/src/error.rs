//! Error taxonomy shared by every subsystem.
//!
//! The variants map one-to-one onto the process exit codes used by the CLI:
//! configuration problems exit with 2, metric degeneracy (a flow singularity)
//! with 3 and non-finite numbers with 4.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum HkError {
    /// Invalid configuration, precondition or file-format violation.
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    /// Two fields that must live on the same grid do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The metric lost positive definiteness (minimum eigenvalue at or
    /// below the floor). Carries the diagnostic singularity report.
    #[error("metric degenerate: min eigenvalue {min_eig:.3e} at point {location:?} (t = {t})")]
    MetricDegenerate {
        /// Flow time at which degeneracy was detected (0 for static checks).
        t: f64,
        /// Flat grid index of the offending point.
        location: usize,
        /// Minimum eigenvalue found there.
        min_eig: f64,
    },

    /// A NaN or infinity appeared in a field.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// Requested time step exceeds the stability bound.
    #[error("CFL violation: dt = {dt:.3e} exceeds bound {max_dt:.3e}")]
    CflViolation { dt: f64, max_dt: f64 },

    /// Filesystem or serialization failure in the runner.
    #[error("i/o error: {0}")]
    Io(String),
}

impl HkError {
    /// Process exit status associated with this error.
    pub fn exit_status(&self) -> i32 {
        match self {
            HkError::ConfigInvalid(_) | HkError::ShapeMismatch(_) | HkError::Io(_) => 2,
            HkError::MetricDegenerate { .. } => 3,
            HkError::NonFinite(_) | HkError::CflViolation { .. } => 4,
        }
    }
}

impl From<std::io::Error> for HkError {
    fn from(e: std::io::Error) -> Self {
        HkError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HkError>;

/// Positive-definiteness floor for metrics. A metric whose smallest
/// eigenvalue drops to this level is treated as degenerate.
pub const PD_FLOOR: f64 = 1e-8;

use std::path::PathBuf;

use thiserror::Error;

use crate::ensemble::TrajectorySeed;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{field}` {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("oracle scale exceeded: n_sites = {0}, the full-space oracle supports at most 6")]
    OracleScale(usize),

    #[error("non-finite density matrix entries at step {step}")]
    NonFinite { step: u64 },

    #[error("positivity violated at step {step} (smallest eigenvalue {min_eigenvalue:.3e}); reduce dt")]
    Positivity { step: u64, min_eigenvalue: f64 },

    #[error("trajectory {seed} failed: {source}")]
    Trajectory {
        seed: TrajectorySeed,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} trajectories failed (more than 0.1%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("insufficient samples: need at least {needed}, have {have}")]
    InsufficientSamples { needed: usize, have: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("checkpoint {path:?} does not match this run plan")]
    CheckpointMismatch { path: PathBuf },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures caused by the numerical integration rather than by
    /// bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::Positivity { .. } | Error::TooManyFailures { .. } => {
                true
            }
            Error::Trajectory { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

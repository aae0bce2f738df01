use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("landmarks {i} and {j} are too close (distance {distance:e})")]
    CoincidentLandmarks { i: usize, j: usize, distance: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-finite state encountered at step {step}")]
    NonFinite { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotPositiveDefinite(_) | Error::NonFinite { .. } => 2,
            _ => 1,
        }
    }

    /// True for failures that an MCMC move treats as a rejected proposal.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_) | Error::NonFinite { .. } | Error::CoincidentLandmarks { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

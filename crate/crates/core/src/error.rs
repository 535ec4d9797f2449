use std::path::PathBuf;

/// Errors produced by the planner library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("diffusion time {0} outside [0, 1]")]
    Domain(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point is {distance:.4} m from the centerline, beyond the corridor limit {limit:.4} m")]
    OutOfCorridor { distance: f64, limit: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("infeasible scene: {0}")]
    InfeasibleScene(String),

    #[error("training diverged at epoch {epoch}; parameters restored to the last finite epoch")]
    Diverged { epoch: usize },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by unsatisfiable inputs rather than internal faults.
    pub fn is_infeasible_input(&self) -> bool {
        matches!(self, Error::InfeasibleScene(_) | Error::OutOfCorridor { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

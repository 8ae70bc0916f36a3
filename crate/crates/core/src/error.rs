use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate orientation: pitch {pitch} rad is within 1e-6 of +/-pi/2")]
    DegenerateOrientation { pitch: f64 },

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error(
        "registration failed at iteration {iteration}: {correspondences} correspondences \
         (need 6) within {max_dist:.3} m, source {source_points} pts, target {target_points} pts"
    )]
    RegistrationFailed {
        iteration: usize,
        correspondences: usize,
        max_dist: f64,
        source_points: usize,
        target_points: usize,
    },

    #[error("singular innovation covariance (condition number {condition:.3e})")]
    SingularUpdate { condition: f64 },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed data in {path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }
}

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("metric is undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error(
        "cannot reach target coverage {target:.3} within tolerance {tolerance}: \
         max achievable {max_achievable:.3}, closest {closest:.3}"
    )]
    CalibrationFailed {
        target: f64,
        tolerance: f64,
        max_achievable: f64,
        closest: f64,
    },

    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },

    #[error("invalid feedback event: {0}")]
    InvalidEvent(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("integrity error in {path}: {message}")]
    Integrity { path: PathBuf, message: String },

    #[error("model not found: {0}")]
    NotFound(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

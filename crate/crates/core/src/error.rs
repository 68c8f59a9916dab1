use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {coord} = {value} lies outside [{lower}, {upper}]")]
    Domain {
        coord: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("correlation matrix not positive definite after nugget escalation (final nugget {nugget:e})")]
    Conditioning { nugget: f64 },

    #[error("trend matrix is rank deficient ({0})")]
    Trend(String),

    #[error("need at least {required} design points, have {available}")]
    InsufficientPoints { required: usize, available: usize },

    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("new point coincides with design point {index}")]
    DegenerateUpdate { index: usize },

    #[error("zero-density start point for the Markov chain")]
    StartPoint,

    #[error("negative predictive variance {0:e}")]
    NegativeVariance(f64),

    #[error("LOO-CV diagnostics invalid at level {level}, point {index}: {reason}")]
    Diagnostics {
        level: usize,
        index: usize,
        reason: String,
    },

    #[error("designs are not nested: {0}")]
    Nesting(String),

    #[error("simulator failed at level {level} for point {point:?}: {reason}")]
    Simulator {
        level: usize,
        point: Vec<f64>,
        reason: String,
    },

    #[error("budget error: {0}")]
    Budget(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("truth is constant over the test set; normalized RMSE undefined")]
    ZeroRange,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

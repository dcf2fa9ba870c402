use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation matrix is not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("negative initial covariance entry {value} at index {index}")]
    NegativeCovariance { index: usize, value: f64 },

    #[error("need at least 2 samples, got {count}")]
    TooFewSamples { count: usize },

    #[error("timestamps not strictly increasing at sample {index} ({prev} -> {t})")]
    NonMonotone { index: usize, prev: f64, t: f64 },

    #[error("sample {index} has a component with magnitude above {limit}")]
    OutOfRange { index: usize, limit: f64 },

    #[error("device not static during initialization: |a| = {magnitude:.4} m/s^2, expected {expected:.4} m/s^2")]
    NotStatic { magnitude: f64, expected: f64 },

    #[error("innovation covariance is singular (condition number {condition:.3e})")]
    DegenerateUpdate { condition: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid gait: {0}")]
    InvalidGait(String),

    #[error("length mismatch: {flags} flags vs {times} timestamps")]
    LengthMismatch { flags: usize, times: usize },

    #[error("trajectories do not overlap in time")]
    NoOverlap,

    #[error("{path}: bad header: column {column} is `{found}`, expected `{expected}`")]
    Header { path: String, column: usize, found: String, expected: String },

    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    ColumnCount { path: String, line: usize, expected: usize, found: usize },

    #[error("{path}:{line}: column `{column}` has invalid value `{value}`")]
    Cell { path: String, line: usize, column: String, value: String },

    #[error("{path}:{line}: unknown key `{key}`")]
    UnknownKey { path: String, line: usize, key: String },

    #[error("{path}:{line}: invalid value for `{key}`: `{value}`")]
    BadValue { path: String, line: usize, key: String, value: String },

    #[error("{path}:{line}: {message}")]
    Syntax { path: String, line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

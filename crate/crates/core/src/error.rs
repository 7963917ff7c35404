use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has zero L2 norm")]
    ZeroRow { row: usize },

    #[error("invalid FEMB file: {0}")]
    Format(String),

    #[error("truncated FEMB payload: expected {expected} bytes, found {actual}")]
    Truncation { expected: u64, actual: u64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("caption ids are not dense: expected id {expected}, found {found}")]
    IdGap { expected: usize, found: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{0} must be L2-normalized")]
    NotNormalized(&'static str),

    #[error("highly activating set is empty")]
    EmptyHighSet,

    #[error("embedding rows ({found}) do not align with {expected} samples")]
    Alignment { expected: usize, found: usize },

    #[error("linear system is singular even with ridge term {lambda}")]
    SingularSystem { lambda: f64 },

    #[error(
        "epsilon {epsilon} for feature {feature} exceeds alpha {alpha}; \
         high and low sets could overlap"
    )]
    EpsilonAboveAlpha {
        feature: usize,
        epsilon: f64,
        alpha: f64,
    },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid fixture size: {0}")]
    Size(String),

    #[error("fixture self-check failed: {0}")]
    SelfCheck(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for configuration
    /// problems, 3 for everything that went wrong with the data itself.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}

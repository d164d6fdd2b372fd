use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
///
/// Variants map onto the failure classes the CLI distinguishes: I/O failures
/// (exit code 2) versus everything else (validation, exit code 1).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("point behind camera (depth {depth:e})")]
    BehindCamera { depth: f64 },

    #[error("invalid depth {0}: must be > 0")]
    InvalidDepth(f64),

    #[error("value {value} outside [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    #[error("singular values too close for a stable SVD derivative (gap {gap:e})")]
    NearDegenerateSvd { gap: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("unknown object '{0}'")]
    Lookup(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures caused by the filesystem rather than the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

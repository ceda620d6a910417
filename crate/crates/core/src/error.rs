use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate batch: batch-norm train mode needs at least 2 rows, got {0}")]
    DegenerateBatch(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing saved context: {0}")]
    MissingContext(String),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("no BN layers in network")]
    NoBatchNorm,

    #[error(
        "training diverged at step {step} (epoch {epoch}): loss={loss}, eta_theta={eta_theta}, eta_w={eta_w}"
    )]
    Diverged {
        step: usize,
        epoch: usize,
        loss: f64,
        eta_theta: f64,
        eta_w: f64,
    },

    #[error("function preservation check failed: discrepancy {discrepancy:e} > tolerance {tolerance:e}")]
    ToleranceBreach { discrepancy: f64, tolerance: f64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Coarse failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Numerical,
    Io,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite(_)
            | Error::DegenerateBatch(_)
            | Error::Diverged { .. }
            | Error::ToleranceBreach { .. } => ErrorClass::Numerical,
            Error::Io { .. } | Error::Parse { .. } | Error::Serde(_) => ErrorClass::Io,
            _ => ErrorClass::Usage,
        }
    }

    /// 0 is reserved for success; 1 usage/config, 2 numerical, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Numerical => 2,
            ErrorClass::Io => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

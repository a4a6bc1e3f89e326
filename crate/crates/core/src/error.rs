use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Well-formed input that violates a data contract (rating range, id bounds, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("finite-difference loss is not finite at coordinate {coordinate}")]
    NonFiniteLoss { coordinate: usize },

    #[error("training diverged at step {step}: {component} is {value}")]
    Divergence {
        step: usize,
        component: &'static str,
        value: f64,
    },

    #[error(
        "exposure calibration failed after {steps} bisection steps: achieved density {achieved:.5}, target {target:.5}"
    )]
    Calibration { steps: usize, achieved: f64, target: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

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

    /// Coarse category used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::Unsupported(_) => ErrorKind::Config,
            Error::Parse { .. } | Error::Validation(_) | Error::Io { .. } => ErrorKind::Data,
            Error::Numerical(_)
            | Error::NonFiniteLoss { .. }
            | Error::Divergence { .. }
            | Error::Calibration { .. }
            | Error::Diagnostic(_) => ErrorKind::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

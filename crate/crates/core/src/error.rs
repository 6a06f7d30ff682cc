use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate surface normal: query point coincides with the arc center")]
    DegenerateNormal,

    #[error("singular configuration: Jacobian condition number {condition:.3e} exceeds bound {bound:.3e}")]
    Singular { condition: f64, bound: f64 },

    #[error("simulation fault at t = {t:.6} s: {reason}")]
    SimFault { t: f64, reason: String },

    #[error("normal system is numerically singular; cannot fit shape weights")]
    RankDeficient,

    #[error("insufficient contact: {0}")]
    InsufficientContact(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: NLL is not finite")]
    Divergence { epoch: usize },

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("window buffers are not full ({filled} of {capacity} samples)")]
    NotReady { filled: usize, capacity: usize },

    #[error("score log is empty")]
    EmptyLog,

    #[error("log has {samples} samples, fewer than the window length {window}")]
    LogTooShort { samples: usize, window: usize },

    #[error("mismatched logs: {0}")]
    MismatchedLogs(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

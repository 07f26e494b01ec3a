use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid attention mask: row {row} has no visible entry")]
    InvalidMask { row: usize },

    #[error("invalid distribution: row {row} sums to {sum}")]
    InvalidDistribution { row: usize, sum: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("user history is empty")]
    EmptyHistory,

    #[error("session of {len} tokens exceeds the encoder limit of {max}")]
    SessionTooLong { len: usize, max: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: invalid label in candidate token `{token}`")]
    Label {
        path: PathBuf,
        line: usize,
        token: String,
    },

    #[error("duplicate content id `{id}`")]
    DuplicateId { id: String },

    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config mismatch for `{key}`: checkpoint has {found}, model expects {expected}")]
    ConfigMismatch {
        key: String,
        expected: String,
        found: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("summary backend failed after {attempts} attempt(s): {message}")]
    Profiler { attempts: usize, message: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("no impressions to evaluate")]
    EmptyImpressions,

    #[error("loss became non-finite at step {step} (lr {lr:e}, last finite loss {last_loss})")]
    NanLoss { step: usize, lr: f64, last_loss: f64 },

    #[error("gradient check failed: {name} has relative error {error:e}")]
    GradCheck { name: String, error: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigMismatch { .. } => 1,
            Error::Dimension { .. }
            | Error::InvalidMask { .. }
            | Error::InvalidDistribution { .. }
            | Error::NonFinite { .. }
            | Error::NanLoss { .. }
            | Error::GradCheck { .. } => 3,
            _ => 2,
        }
    }
}

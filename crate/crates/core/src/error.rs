use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("objective/data mismatch: {0}")]
    ObjectiveMismatch(String),

    #[error("divergence: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("sequence too long: {len} > max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("sequence does not start with CLS")]
    MissingCls,

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u64 },

    #[error("missing judgments for {} pair(s): {pairs:?}", pairs.len())]
    MissingJudgments { pairs: Vec<(u64, u64)> },

    #[error("version mismatch, full rebuild required (store {store}, model {model})")]
    VersionMismatch { store: String, model: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("store error at {path}: {reason}")]
    Store { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn store(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Store {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

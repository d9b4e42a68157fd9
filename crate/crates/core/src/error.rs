use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("{what} out of range: {value}")]
    Range { what: &'static str, value: String },

    #[error("invalid map: {0}")]
    Map(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("train/eval overlap: {0} episode(s) present in both splits")]
    Overlap(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Torch(#[from] tch::TchError),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn range(what: &'static str, value: impl ToString) -> Self {
        Error::Range {
            what,
            value: value.to_string(),
        }
    }
}

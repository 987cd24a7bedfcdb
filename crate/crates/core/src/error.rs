use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("sample rejected: {0}")]
    SampleRejected(String),

    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite (completed epoch losses: {losses:?})")]
    Diverged { epoch: usize, losses: Vec<f64> },

    #[error("model has not been trained")]
    Untrained,

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("exact Shapley needs 2^{k} coalitions; use the two-marginal approximation for k > {limit}")]
    TooManyPlayers { k: usize, limit: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

use std::path::PathBuf;

/// Errors produced anywhere in the cocoon pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vocabulary is empty after applying min_count={min_count}")]
    EmptyVocabulary { min_count: u64 },

    #[error("category map: {0}")]
    CategoryMap(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("zero vector at row `{0}` cannot be normalized")]
    ZeroVector(String),

    #[error("non-finite parameter after epoch {epoch} (learning rate {lr})")]
    NonFinite { epoch: usize, lr: f64 },

    #[error("null ensemble repetition {repetition} failed: {source}")]
    Repetition {
        repetition: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("design matrix is rank deficient: column `{0}` is collinear with earlier columns")]
    RankDeficient(String),

    #[error("missing upstream artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("binary encoding: {0}")]
    Encoding(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

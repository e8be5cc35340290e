use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: malformed JSON: {source}", path.display())]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate {kind} id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        kind: &'static str,
        id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("{}:{line}: unknown judgment level {level:?}", path.display())]
    UnknownLevel {
        path: PathBuf,
        line: usize,
        level: String,
    },

    #[error("dangling {kind} id {id:?}")]
    DanglingId { kind: &'static str, id: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty test set")]
    EmptyTestSet,

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("validation fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),

    #[error("query {query_id:?} has {eligible} eligible negatives but {required} were requested")]
    NotEnoughNegatives {
        query_id: String,
        eligible: usize,
        required: usize,
    },

    #[error("zero-norm vector ({0})")]
    ZeroNorm(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad file format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

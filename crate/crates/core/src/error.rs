use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("embedding format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("degenerate vector: row {row} has zero norm")]
    DegenerateVector { row: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("embedding provider failed ({status}): {stderr}")]
    Provider { status: String, stderr: String },

    #[error("alignment error: expected {expected} embedding rows, found {found}")]
    Alignment { expected: usize, found: usize },

    #[error("insufficient documents: triplet generation needs at least 2, found {found}")]
    InsufficientDocuments { found: usize },

    #[error("over-filtering: would remove {removed} of {total} triplets")]
    OverFiltering { removed: usize, total: usize },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("insufficient data: {groups} sentence groups for {k} topics")]
    InsufficientData { groups: usize, k: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("reference corpus is empty")]
    EmptyReference,

    #[error("coherence undefined: no topic has two scorable words")]
    UndefinedCoherence,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

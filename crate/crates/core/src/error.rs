use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A vector with zero (or non-finite) norm was handed to the cosine kernel.
    #[error("degenerate vector{}", .index.map(|i| format!(" at node {i}")).unwrap_or_default())]
    DegenerateVector { index: Option<usize> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("embedding service at {endpoint} failed: {message}")]
    Transport { endpoint: String, message: String },

    #[error("out-of-order segment: expected index {expected}, got {found}")]
    Sequencing { expected: usize, found: usize },

    #[error("memory holds no summaries")]
    EmptyMemory,

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("corrupt state: {0}")]
    CorruptState(String),

    #[error("document of {n} tokens exceeds the dense oracle cap of {cap}")]
    ResourceLimit { n: usize, cap: usize },

    #[error("segment {segment}: {source}")]
    InSegment {
        segment: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: line {line}: {message}")]
    Corpus {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: duplicate doc_id {doc_id:?} on lines {first} and {second}")]
    DuplicateDocId {
        path: PathBuf,
        doc_id: String,
        first: usize,
        second: usize,
    },

    #[error("snapshot: {0}")]
    Snapshot(#[from] SnapshotError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a snapshot file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {found_major}.{found_minor} (this build reads {supported}.x)")]
    VersionMismatch {
        found_major: u16,
        found_minor: u16,
        supported: u16,
    },
    #[error("checksum mismatch")]
    Checksum,
    #[error("truncated file")]
    Truncated,
    #[error("malformed section: {0}")]
    Malformed(String),
}

impl Error {
    pub(crate) fn in_segment(self, segment: usize) -> Error {
        match self {
            e @ Error::InSegment { .. } => e,
            other => Error::InSegment {
                segment,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

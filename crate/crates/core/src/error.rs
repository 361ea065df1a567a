use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("query has no tokens")]
    EmptyQuery,

    #[error("document {0} has no tokens")]
    EmptyDocument(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("maxsim needs at least one document row and one query row")]
    EmptyScoringInput,

    #[error("query has no token flagged as numeric")]
    NoNumericTokens,

    #[error("k-means needs at least k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("bad magic in {what}: expected {expected:?}")]
    BadMagic { what: &'static str, expected: [u8; 4] },

    #[error("unsupported {what} version {found}")]
    UnsupportedVersion { what: &'static str, found: u32 },

    #[error("index file truncated at byte {offset}")]
    TruncatedIndex { offset: usize },

    #[error("checkpoint truncated at byte {offset}")]
    TruncatedCheckpoint { offset: usize },

    #[error("corrupt {what}: {detail}")]
    Corrupt { what: &'static str, detail: String },

    #[error("{file}:{line}: {detail}")]
    Parse {
        file: String,
        line: usize,
        detail: String,
    },

    #[error("non-finite loss at step {step}: {dump}")]
    NonFiniteLoss { step: usize, dump: String },

    #[error("run file for query {qid} is not sorted by descending score")]
    UnsortedRun { qid: String },

    #[error("run file lists document {doc} twice for query {qid}")]
    DuplicateRunEntry { qid: String, doc: String },

    #[error("unknown {kind} {name:?}; known: {known}")]
    UnknownName {
        kind: &'static str,
        name: String,
        known: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

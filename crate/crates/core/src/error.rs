use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("signal too short: {samples} samples, need at least {required}")]
    TooShort { samples: usize, required: usize },
    #[error("degenerate utterance: no voiced frames and no frames above the energy floor")]
    DegenerateUtterance,

    #[error("training data contains a single class")]
    SingleClassData,
    #[error("training loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty word span for word {0}")]
    EmptySpan(usize),
    #[error("word span {index} [{start}, {end}) outside frame range 0..{frames}")]
    SpanOutOfRange { index: usize, start: usize, end: usize, frames: usize },
    #[error("word spans {0} and {1} overlap")]
    OverlappingSpans(usize, usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("model feature fingerprint mismatch: model has {model:?}, runtime has {runtime:?}")]
    FingerprintMismatch { model: String, runtime: String },
    #[error("unsupported model format version {0}")]
    ModelVersion(u32),

    #[error("overlapping timestamps at word {0}")]
    OverlappingTimestamps(usize),
    #[error("negative or non-finite time at word {0}")]
    NegativeTime(usize),
    #[error("found {found} segments, expected {expected}")]
    SegmentCountMismatch { found: usize, expected: usize },

    #[error("token sequences are not identical after normalization")]
    NotIdentical,
    #[error("empty parallel corpus")]
    EmptyCorpus,
    #[error("unknown aligner {0:?}; valid values: identity, chargram, lexicon:PATH, external:PATH")]
    UnknownScorer(String),
    #[error("no external similarity scores for pair {0:?}")]
    MissingExternalScores(String),
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("output id {0:?} does not match source id {1:?}")]
    IdMismatch(String, String),
    #[error("output id {0:?} not present in manifest")]
    UnknownId(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("token {0:?} missing from simulated-language map")]
    UnmappedToken(String),
    #[error("emphasis index {index} out of bounds for {len} tokens")]
    InvalidIndex { index: usize, len: usize },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }
}

use std::io;

use crate::data::{Paradigm, SubjectId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("trailing bytes after last record: {0} bytes")]
    TrailingBytes(u64),

    #[error("manifest does not match records: {0}")]
    ManifestMismatch(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("epoch failed validation: {0:?}")]
    InvalidEpoch(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("signal too short: need more than {needed} samples, got {got}")]
    SignalTooShort { needed: usize, got: usize },

    #[error("cannot choose {k} items from {n}")]
    ChoiceTooLarge { n: usize, k: usize },

    #[error("class too small: {have} epochs, need at least {need}")]
    ClassTooSmall { have: usize, need: usize },

    #[error("degenerate ERP template for subject {subject} {paradigm}")]
    DegenerateTemplate {
        subject: SubjectId,
        paradigm: Paradigm,
    },

    #[error("waveform does not fit the epoch: {0}")]
    WaveformOutOfBounds(String),

    #[error("not enough trials: {0}")]
    NotEnoughTrials(String),

    #[error("label set has a single class")]
    SingleClass,

    #[error("training diverged at pass {pass}, batch {batch}: loss {loss}")]
    Divergence { pass: usize, batch: usize, loss: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("zero-variance envelope in window")]
    ZeroVariance,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

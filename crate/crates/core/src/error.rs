use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the feature, model and scoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not a RIFF/WAVE file: {0}")]
    NotWave(String),
    #[error("unsupported wav encoding: format tag {format_tag}, {bits_per_sample} bits per sample")]
    UnsupportedEncoding { format_tag: u16, bits_per_sample: u16 },
    #[error("unsupported channel count {0}, expected mono")]
    ChannelCount(u16),
    #[error("unsupported sample rate {0} Hz, expected 16000")]
    SampleRate(u32),
    #[error("truncated {chunk} chunk: declared {declared} bytes, {available} available")]
    TruncatedChunk {
        chunk: String,
        declared: usize,
        available: usize,
    },
    #[error("missing {0} chunk")]
    MissingChunk(&'static str),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("input too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("bad feature file: {0}")]
    FeatureFormat(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("trial list needs at least one target and one nontarget trial")]
    MissingTrialClass,
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

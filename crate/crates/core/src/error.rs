use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("waveform has {len} samples, shorter than one analysis window of {win}")]
    InputTooShort { len: usize, win: usize },

    #[error("alignment mismatch: {0}")]
    Alignment(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("phoneme id {id} out of vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("unknown phoneme symbol `{0}`")]
    UnknownPhoneme(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite loss term `{term}` at step {step}")]
    NonFinite { term: &'static str, step: usize },

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("utterance `{id}` failed: {msg}")]
    Utterance { id: String, msg: String },

    #[error("degenerate output: {0}")]
    Degenerate(String),

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InputTooShort { .. } => "input_too_short",
            Error::Alignment(_) => "alignment",
            Error::Parse { .. } => "parse",
            Error::Consistency(_) => "consistency",
            Error::Vocabulary { .. } | Error::UnknownPhoneme(_) => "vocabulary",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "non_finite",
            Error::CheckpointVersion { .. } => "checkpoint_version",
            Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Error::Utterance { .. } => "utterance",
            Error::Degenerate(_) => "degenerate",
            Error::UnknownVariant(_) => "unknown_variant",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io { .. } => "io",
            Error::Tensor(_) => "tensor",
            Error::Json(_) => "json",
            Error::Wav(_) => "wav",
            Error::Image(_) => "image",
        }
    }
}

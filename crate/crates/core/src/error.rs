use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic")]
    BadMagic,

    #[error("truncated {0}")]
    Truncated(&'static str),

    #[error("shape/payload mismatch: shape implies {expected} payload bytes, found {found}")]
    ShapePayloadMismatch { expected: usize, found: usize },

    #[error("invalid tensor header: {0}")]
    Header(String),

    #[error("non-finite value in tensor")]
    NonFinite,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty pitch range")]
    EmptyRange,

    #[error("mixture size {m} exceeds instrument count {n}")]
    MixTooLarge { m: usize, n: usize },

    #[error("audio too short: {len} samples, need at least {needed}")]
    AudioTooShort { len: usize, needed: usize },

    #[error("need at least 2 frames for energy variance, got {0}")]
    TooFewFrames(usize),

    #[error("unknown harmonic {0}")]
    UnknownHarmonic(f64),

    #[error("no salient bins")]
    NoSalientBins,

    #[error("assignment row {0} is not one-hot")]
    NotOneHot(usize),

    #[error("nonpositive loss {value} at index {index}")]
    NonPositiveLoss { index: usize, value: f64 },

    #[error("fewer selected bins than M ({selected} < {m})")]
    TooFewBins { selected: usize, m: usize },

    #[error("zero total weight")]
    ZeroWeight,

    #[error("cluster count {k} exceeds point count {n}")]
    TooFewPoints { k: usize, n: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}

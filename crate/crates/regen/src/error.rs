use thiserror::Error;

/// Errors produced by the enhancement engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported sample rate {rate} Hz, supported rates: {supported:?}")]
    UnsupportedRate { rate: u32, supported: Vec<u32> },

    #[error("band count {n_bands} out of range, must be in 1..={bins}")]
    InvalidBandCount { n_bands: usize, bins: usize },

    #[error("{context}: length mismatch ({left} vs {right})")]
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    #[error("deep filter needs {needed} frames of history, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("weight normalization direction has zero norm at output channel {row}")]
    ZeroNormDirection { row: usize },

    #[error("epoch {epoch} out of range 0..{epochs}")]
    EpochOutOfRange { epoch: usize, epochs: usize },

    #[error("reference signal is all zeros")]
    ZeroReference,

    #[error("metric category {0:?} has no metrics")]
    EmptyCategory(String),

    #[error("missing value for model {model:?}, metric {metric:?}")]
    MissingCell { model: String, metric: String },

    #[error("line {line}: {message}")]
    CsvFormat { line: usize, message: String },

    #[error("input too short: discriminator needs at least {needed} samples, got {got}")]
    InputTooShort { needed: usize, got: usize },

    #[error("stream poisoned by earlier non-finite input; reset before reuse")]
    StreamPoisoned,

    #[error("stream already flushed; reset before reuse")]
    StreamClosed,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(String),

    #[error("WAV format error: {0}")]
    WavFormat(String),

    #[error("training aborted: non-finite loss at step {step}, last finite step {last_finite_step:?} had total {last_finite_total:?}")]
    NanLoss {
        step: usize,
        last_finite_step: Option<usize>,
        last_finite_total: Option<f64>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

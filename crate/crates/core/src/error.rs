use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("RejectionExhausted: could not place source {source_index} after {attempts} attempts")]
    RejectionExhausted {
        source_index: usize,
        attempts: usize,
    },

    #[error("Starvation: stream could not supply a {wanted} placement within {lookahead} draws")]
    Starvation {
        wanted: &'static str,
        lookahead: usize,
    },

    #[error("DegenerateGeometry: source and microphone coincide ({distance:.2e} m apart)")]
    DegenerateGeometry { distance: f64 },

    #[error("SilentImpulse: impulse response has zero energy")]
    SilentImpulse,

    #[error("InsufficientDecay: only {range_db:.1} dB of decay available (need 20 dB)")]
    InsufficientDecay { range_db: f64 },

    #[error("ShapeMismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("SampleRateMismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },

    #[error("CorpusExhausted: need {needed} distinct speakers, partition has {available}")]
    CorpusExhausted { needed: usize, available: usize },

    #[error("SilentReference: reference signal has zero energy")]
    SilentReference,

    #[error("SilentMixture: mixture has zero energy")]
    SilentMixture,

    #[error("NonFiniteLoss: loss evaluated to {0}")]
    NonFiniteLoss(f64),

    #[error("MissingEstimate: {0}")]
    MissingEstimate(PathBuf),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

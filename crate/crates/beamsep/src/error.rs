use thiserror::Error;

/// Errors produced by the separation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate steering: target and interferer directions coincide")]
    DegenerateSteering,

    #[error("no signal: input spectrogram is all zero")]
    NoSignal,

    #[error("DOA fit did not converge after {evals} evaluations (best loss {loss})")]
    NonConvergence {
        evals: usize,
        loss: f64,
        /// Best angles found so far, degrees: (az1, el1, az2, el2).
        best_deg: (f64, f64, f64, f64),
    },

    #[error("SDR loss has no magnitude form; alpha must be 1")]
    UnsupportedLossCombination,

    #[error("degenerate target: SDR loss undefined for an all-zero target")]
    DegenerateTarget,

    #[error("degenerate reference: all-zero reference signal")]
    DegenerateReference,

    #[error("target and interferer references are collinear")]
    CollinearReferences,

    #[error("source position coincides with a microphone")]
    SingularDistance,

    #[error("position {0:?} outside room")]
    OutsideRoom([f64; 3]),

    #[error("wav format: {0}")]
    WavFormat(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code class: 2 usage, 3 data/format, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::UnsupportedLossCombination => 2,
            Error::Io(_) | Error::Json(_) | Error::Wav(_) | Error::WavFormat(_)
            | Error::ShapeMismatch(_) | Error::SignalTooShort { .. } | Error::OutsideRoom(_) => 3,
            _ => 4,
        }
    }
}

use thiserror::Error;

/// Errors produced by plants, training, and the experiment pipeline.
#[derive(Debug, Error)]
pub enum VentError {
    #[error("lung volume would become non-positive (v = {v:.3} mL after applying flow)")]
    NonPositiveVolume { v: f64 },

    #[error("safety abort at t = {t:.3} s: pressure {p:.2} cmH2O exceeded ceiling {p_max:.2}")]
    SafetyAbort { t: f64, p: f64, p_max: f64 },

    #[error("trajectory contains no samples")]
    EmptyTrajectory,

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("tape is stale: network parameters changed since the forward pass")]
    StaleTape,

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("no episode long enough to populate the general regression set (need length > {min_len})")]
    EpisodeTooShort { min_len: usize },

    #[error("training diverged: episode loss {loss:.3} exceeded 10x its initial value {initial:.3}")]
    DivergentLoss { loss: f64, initial: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("stage {stage} failed: {source}")]
    StageFailed {
        stage: String,
        #[source]
        source: Box<VentError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, VentError>;

impl VentError {
    pub fn in_stage(self, stage: &str) -> VentError {
        VentError::StageFailed {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

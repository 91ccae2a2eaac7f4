use thiserror::Error;

pub type Result<T> = std::result::Result<T, AfapeError>;

#[derive(Debug, Error)]
pub enum AfapeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A propensity mass needed in a denominator was zero (or the effective
    /// sample for a normalized weight vanished).
    #[error("positivity violation at step {t} (record {record}): {detail}")]
    Positivity { t: usize, record: u64, detail: String },

    #[error("no effective sample at step {t}: all weights are zero")]
    EmptyEffectiveSample { t: usize },

    #[error("model fit failed: {0}")]
    Fit(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AfapeError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AfapeError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        AfapeError::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        AfapeError::Config(msg.into())
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn at_stage(self, stage: &'static str) -> Self {
        AfapeError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

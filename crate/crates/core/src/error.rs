use crate::time::SimTime;
use thiserror::Error;

/// Errors surfaced by scenario loading and simulation runs.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled in the past: fire_at={fire_at}, clock={clock}")]
    PastEvent { fire_at: SimTime, clock: SimTime },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("scenario error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("unknown preset `{name}` (available: {available})")]
    UnknownPreset { name: String, available: String },

    #[error("audit failure: {0}")]
    Audit(String),

    #[error("fixed-point solver did not converge after {iterations} iterations")]
    NoConvergence { iterations: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

impl SimError {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        SimError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Internal consistency failures (as opposed to bad input).
    pub fn is_audit(&self) -> bool {
        matches!(self, SimError::Audit(_) | SimError::PastEvent { .. })
    }
}

pub type Result<T> = std::result::Result<T, SimError>;

//! Candidate generation backends.
//!
//! A backend turns a rendered prompt into a [`CandidateSet`]: `num_samples`
//! ancestral samples in sampling mode, or the single beam-search output in beam
//! mode. Candidate order is preserved exactly as produced.

mod mock;
mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::HttpError;

pub use mock::{MockBackend, MockFallback, MockRule, MockTable, WeightedOutput};
pub use remote::{GenerateRequest, GenerateResponse, HttpBackend};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("mock table has no entry for query `{0}`")]
    UnknownQuery(String),
    #[error(transparent)]
    Transport(HttpError),
    #[error("backend refused the request (status {status}): {body}")]
    Refused { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("expected {expected} candidates, backend returned {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

impl From<HttpError> for BackendError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Rejected { status, body } => BackendError::Refused { status, body },
            HttpError::Protocol(m) => BackendError::Protocol(m),
            t @ HttpError::Transport { .. } => BackendError::Transport(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DecodingMode {
    Sample,
    Beam { beam_size: usize, length_alpha: f64 },
}

impl DecodingMode {
    pub const DEFAULT_BEAM: Self = DecodingMode::Beam { beam_size: 4, length_alpha: 0.6 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub num_samples: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub stop_sequences: Vec<String>,
    pub mode: DecodingMode,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            num_samples: 64,
            temperature: 1.0,
            max_new_tokens: 256,
            stop_sequences: vec!["\n".to_string()],
            mode: DecodingMode::Sample,
        }
    }
}

impl GenerationParams {
    pub fn beam() -> Self {
        Self { mode: DecodingMode::DEFAULT_BEAM, ..Self::default() }
    }

    /// Candidates a conforming backend returns for these parameters.
    pub fn expected_candidates(&self) -> usize {
        match self.mode {
            DecodingMode::Sample => self.num_samples,
            DecodingMode::Beam { .. } => 1,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.num_samples == 0 {
            return Err(BackendError::InvalidParams("num_samples must be at least 1".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidParams("max_new_tokens must be at least 1".into()));
        }
        match self.mode {
            DecodingMode::Sample if !(self.temperature > 0.0 && self.temperature.is_finite()) => {
                Err(BackendError::InvalidParams(format!("sampling needs temperature > 0, got {}", self.temperature)))
            }
            DecodingMode::Beam { beam_size: 0, .. } => {
                Err(BackendError::InvalidParams("beam_size must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub prompt_id: String,
    pub candidates: Vec<String>,
}

pub trait Backend: Send + Sync {
    fn identity(&self) -> String;

    fn health(&self) -> Result<(), BackendError>;

    /// Generates candidates for `prompt`. `seed` drives any local randomness;
    /// remote services may ignore it.
    fn generate(&self, prompt: &str, params: &GenerationParams, seed: u64) -> Result<CandidateSet, BackendError>;
}

/// Cuts `text` at the earliest stop sequence.
pub fn apply_stop(text: &str, stops: &[String]) -> String {
    let cut = stops.iter().filter(|s| !s.is_empty()).filter_map(|s| text.find(s.as_str())).min().unwrap_or(text.len());
    text[..cut].to_string()
}

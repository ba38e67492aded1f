use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CandidateSet, DecodingMode, GenerationParams};
use crate::http::{JsonClient, RetryPolicy};
use crate::prompt::prompt_hash;

/// Request body for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub num_samples: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub stop: Vec<String>,
    /// `"sample"` or `"beam"`.
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_alpha: Option<f64>,
}

impl GenerateRequest {
    pub fn new(prompt: &str, params: &GenerationParams) -> Self {
        let (mode, beam_size, length_alpha) = match params.mode {
            DecodingMode::Sample => ("sample", None, None),
            DecodingMode::Beam { beam_size, length_alpha } => ("beam", Some(beam_size), Some(length_alpha)),
        };
        Self {
            prompt: prompt.to_string(),
            num_samples: params.expected_candidates(),
            temperature: params.temperature,
            max_new_tokens: params.max_new_tokens,
            stop: params.stop_sequences.clone(),
            mode: mode.to_string(),
            beam_size,
            length_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub candidates: Vec<String>,
}

/// Client for a remote inference service speaking [`GenerateRequest`] /
/// [`GenerateResponse`].
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: JsonClient,
}

impl HttpBackend {
    pub const URL_ENV: &'static str = "FEWSHOT_BACKEND_URL";
    pub const TOKEN_ENV: &'static str = "FEWSHOT_BACKEND_TOKEN";

    pub fn new(url: impl Into<String>, token: Option<String>, retry: RetryPolicy, timeout: Duration) -> Self {
        Self { client: JsonClient::new(url, token, retry, timeout) }
    }
}

impl Backend for HttpBackend {
    fn identity(&self) -> String {
        format!("http({})", self.client.url())
    }

    fn health(&self) -> Result<(), BackendError> {
        // a one-sample request doubles as a liveness probe
        let probe = GenerationParams { num_samples: 1, max_new_tokens: 1, ..Default::default() };
        self.generate("health check\n", &probe, 0).map(|_| ())
    }

    fn generate(&self, prompt: &str, params: &GenerationParams, _seed: u64) -> Result<CandidateSet, BackendError> {
        params.validate()?;
        let resp: GenerateResponse = self.client.post(&GenerateRequest::new(prompt, params))?;
        let expected = params.expected_candidates();
        if resp.candidates.len() != expected {
            return Err(BackendError::LengthMismatch { expected, actual: resp.candidates.len() });
        }
        Ok(CandidateSet { prompt_id: prompt_hash(prompt), candidates: resp.candidates })
    }
}

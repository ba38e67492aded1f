use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Metric, MetricError};
use crate::http::{JsonClient, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub hypothesis: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub pairs: Vec<ScoredPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

/// Client for a learned metric served over HTTP.
///
/// Pairs go out in batches of `batch_size`; scores come back aligned by index.
#[derive(Debug, Clone)]
pub struct RemoteMetric {
    client: JsonClient,
    batch_size: usize,
}

impl RemoteMetric {
    pub const DEFAULT_BATCH: usize = 128;
    pub const TOKEN_ENV: &'static str = "FEWSHOT_METRIC_TOKEN";

    pub fn new(url: impl Into<String>, token: Option<String>, retry: RetryPolicy, timeout: Duration) -> Self {
        Self { client: JsonClient::new(url, token, retry, timeout), batch_size: Self::DEFAULT_BATCH }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, MetricError> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.batch_size) {
            let req = ScoreRequest {
                pairs: chunk
                    .iter()
                    .map(|(h, r)| ScoredPair { hypothesis: h.to_string(), reference: r.to_string() })
                    .collect(),
            };
            let resp: ScoreResponse = self.client.post(&req)?;
            if resp.scores.len() != chunk.len() {
                return Err(MetricError::LengthMismatch { expected: chunk.len(), actual: resp.scores.len() });
            }
            if let Some(bad) = resp.scores.iter().find(|s| !s.is_finite()) {
                return Err(MetricError::Protocol(format!("non-finite score {bad}")));
            }
            out.extend(resp.scores);
        }
        Ok(out)
    }
}

/// Batched remote scoring of `(hypothesis, reference)` pairs.
pub fn remote_metric_score(metric: &RemoteMetric, pairs: &[(&str, &str)]) -> Result<Vec<f64>, MetricError> {
    metric.score_pairs(pairs)
}

impl Metric for RemoteMetric {
    fn name(&self) -> String {
        format!("remote:{}", self.client.url())
    }

    fn score(&self, hypothesis: &str, reference: &str) -> Result<f64, MetricError> {
        Ok(self.score_pairs(&[(hypothesis, reference)])?[0])
    }

    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, MetricError> {
        self.score_pairs(pairs)
    }

    fn range(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn self_score(&self) -> Option<f64> {
        None
    }

    fn is_local(&self) -> bool {
        false
    }
}

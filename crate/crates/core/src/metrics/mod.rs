//! Translation quality and controllability metrics.
//!
//! Sentence-level metrics implement [`Metric`] and double as MBR utilities.
//! Local metrics (token F1, chrF) are hermetic stand-ins; a learned metric is
//! reached through [`RemoteMetric`].

mod bleu;
mod remote;
mod style;
mod surface;

use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::http::{HttpError, RetryPolicy};

pub use bleu::{bleu_smoothed, corpus_bleu, tokenize_13a, BleuScore};
pub use remote::{remote_metric_score, RemoteMetric, ScoreRequest, ScoreResponse, ScoredPair};
pub use style::{
    formality_accuracy, frmt_score, lexical_accuracy, parse_marked, FormalityAnnotatedRef, FormalityLabel,
    FormalityReport, LexicalAccuracy, LexicalRule, MarkedText, TermEntry, VarietyTermTable,
};
pub use surface::{chrf, token_f1, ChrF, TokenF1};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Transport(HttpError),
    #[error("metric service refused the request (status {status}): {body}")]
    Refused { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("expected {expected} scores, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("negative score {0}")]
    NegativeScore(f64),
    #[error("term entry {entry} has no forms for variety `{variety}`")]
    MissingForms { entry: usize, variety: String },
    #[error("reference {0} has no marked phrase")]
    UnmarkedReference(usize),
    #[error("{0}")]
    Invalid(String),
}

impl From<HttpError> for MetricError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Rejected { status, body } => MetricError::Refused { status, body },
            HttpError::Protocol(m) => MetricError::Protocol(m),
            t @ HttpError::Transport { .. } => MetricError::Transport(t),
        }
    }
}

/// Sentence-level metric `score(hypothesis, reference)`.
pub trait Metric: Send + Sync {
    fn name(&self) -> String;

    fn score(&self, hypothesis: &str, reference: &str) -> Result<f64, MetricError>;

    /// Scores many pairs; remote metrics override this to batch requests.
    fn score_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, MetricError> {
        pairs.iter().map(|(h, r)| self.score(h, r)).collect()
    }

    /// Inclusive score range.
    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    /// Score of a string against itself, when fixed.
    fn self_score(&self) -> Option<f64> {
        Some(1.0)
    }

    fn symmetric(&self) -> bool {
        false
    }

    /// Pure in-process computation (safe to fan out per pair).
    fn is_local(&self) -> bool {
        true
    }
}

/// Metric selector as written on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricSpec {
    TokenF1,
    ChrF,
    Remote(String),
}

impl FromStr for MetricSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "token-f1" => Ok(MetricSpec::TokenF1),
            "chrf" => Ok(MetricSpec::ChrF),
            _ => match s.strip_prefix("remote:") {
                Some(url) if !url.is_empty() => Ok(MetricSpec::Remote(url.to_string())),
                _ => Err(format!("unknown metric `{s}` (expected token-f1, chrf or remote:<url>)")),
            },
        }
    }
}

impl std::fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricSpec::TokenF1 => f.write_str("token-f1"),
            MetricSpec::ChrF => f.write_str("chrf"),
            MetricSpec::Remote(u) => write!(f, "remote:{u}"),
        }
    }
}

impl MetricSpec {
    pub fn build(&self, token: Option<String>, retry: RetryPolicy) -> Arc<dyn Metric> {
        match self {
            MetricSpec::TokenF1 => Arc::new(TokenF1),
            MetricSpec::ChrF => Arc::new(ChrF),
            MetricSpec::Remote(url) => Arc::new(RemoteMetric::new(url.clone(), token, retry, Duration::from_secs(120))),
        }
    }
}

/// Arithmetic mean of per-segment scores.
pub fn corpus_mean(scores: &[f64]) -> Result<f64, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

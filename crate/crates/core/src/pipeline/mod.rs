//! End-to-end runs: select demonstrations, render, generate, MBR-select,
//! parse and evaluate, plus the CDS bucket sweep and style experiments.
//!
//! A run writes `manifest.json`, `records.jsonl`, `report.json` and
//! `report.txt` into its output directory. Each sentence draws from its own
//! seed `derive(rng_seed, index)`, so outputs do not depend on scheduling.

mod eval;
mod experiments;
mod run;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, GenerationParams, HttpBackend, MockBackend, MockTable};
use crate::http::RetryPolicy;
use crate::mbr::{MbrError, MbrOptions};
use crate::metrics::{FormalityLabel, LexicalRule, Metric, MetricError, MetricSpec, VarietyTermTable};
use crate::pool::{PoolError, SelectionConfig};
use crate::prompt::PromptError;
use crate::text::LanguagePair;

pub use eval::{evaluate_outputs, EvalContext, EvalReport, ItemScores};
pub use experiments::{bucket_sweep, style_experiment, BucketResult, StyleReport, SweepReport};
pub use run::{
    build_prompts, translate_testset, PromptMeta, PromptRecord, RecordStatus, RunManifest, RunOutcome, SentenceRecord,
    UsedDemo,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Mbr(#[from] MbrError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

impl PipelineError {
    /// Process exit code: 1 for validation failures, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Pool(_)
            | PipelineError::Prompt(_)
            | PipelineError::Parse { .. }
            | PipelineError::Backend(BackendError::InvalidParams(_)) => 1,
            _ => 2,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Mock {
        table: PathBuf,
    },
    /// URL falls back to `FEWSHOT_BACKEND_URL` when absent.
    Http {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbrConfig {
    pub metric: String,
    #[serde(default)]
    pub exclude_self: bool,
}

impl Default for MbrConfig {
    fn default() -> Self {
        Self { metric: "token-f1".into(), exclude_self: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalEval {
    pub term_table: PathBuf,
    pub target_variety: String,
    #[serde(default)]
    pub rule: LexicalRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    /// Sentence-level quality metric averaged over references.
    pub metric: String,
    pub bleu: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexical: Option<LexicalEval>,
    /// Desired formality level scored against `formal_ref`/`informal_ref`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formality: Option<FormalityLabel>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { metric: "chrf".into(), bleu: true, lexical: None, formality: None }
    }
}

fn default_pair() -> LanguagePair {
    LanguagePair { source_name: "German".into(), target_name: "English".into() }
}

fn default_failure_rate() -> f64 {
    0.1
}

/// Everything that determines a run's outputs.
///
/// `output_dir` is read but not written back into the manifest, so the same
/// run written to two places produces identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_pair")]
    pub pair: LanguagePair,
    pub pool: PathBuf,
    #[serde(default)]
    pub selection: SelectionConfig,
    pub backend: BackendSpec,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub mbr: MbrConfig,
    #[serde(default)]
    pub evaluation: EvalSpec,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: PathBuf,
    /// Largest tolerated fraction of failed sentences.
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
}

impl RunConfig {
    pub fn new(pool: impl Into<PathBuf>, backend: BackendSpec, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            pair: default_pair(),
            pool: pool.into(),
            selection: SelectionConfig::default(),
            backend,
            generation: GenerationParams::default(),
            mbr: MbrConfig::default(),
            evaluation: EvalSpec::default(),
            rng_seed: 0,
            output_dir: output_dir.into(),
            max_failure_rate: default_failure_rate(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks values and that every referenced path exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.pair.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.generation.validate()?;
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(PipelineError::Config(format!("{what} `{}` does not exist", p.display())))
            }
        };
        must_exist(&self.pool, "pool")?;
        if let BackendSpec::Mock { table } = &self.backend {
            must_exist(table, "mock table")?;
        }
        if let Some(lex) = &self.evaluation.lexical {
            must_exist(&lex.term_table, "term table")?;
        }
        self.mbr.metric.parse::<MetricSpec>().map_err(PipelineError::Config)?;
        self.evaluation.metric.parse::<MetricSpec>().map_err(PipelineError::Config)?;
        if self.evaluation.formality == Some(FormalityLabel::Neutral) {
            return Err(PipelineError::Config("desired formality must be formal or informal".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(PipelineError::Config(format!("max_failure_rate {} outside [0, 1]", self.max_failure_rate)));
        }
        Ok(())
    }

    pub fn mbr_options(&self) -> MbrOptions {
        MbrOptions { exclude_self: self.mbr.exclude_self }
    }
}

/// One test segment. Plain-text test files give only `source`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TestItem {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Index into the term table for lexical accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term_entry: Option<usize>,
    /// Formal reference with `[marked]` contrastive phrases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formal_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub informal_ref: Option<String>,
}

impl TestItem {
    pub fn new(source: impl Into<String>) -> Self {
        Self { source: source.into(), ..Self::default() }
    }

    pub fn with_reference(mut self, r: impl Into<String>) -> Self {
        self.reference = Some(r.into());
        self
    }
}

/// Reads a test set: JSONL of [`TestItem`] for `.jsonl`/`.json` files,
/// otherwise one source sentence per line.
pub fn load_test_items(path: &Path) -> Result<Vec<TestItem>, PipelineError> {
    let file = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let jsonl = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json"));
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = if jsonl {
            serde_json::from_str(&line).map_err(|e| PipelineError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?
        } else {
            TestItem::new(line)
        };
        items.push(item);
    }
    Ok(items)
}

pub fn load_term_table(path: &Path) -> Result<VarietyTermTable, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let table: VarietyTermTable =
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    table.validate()?;
    Ok(table)
}

/// Resolved runtime dependencies of a run.
#[derive(Clone)]
pub struct RunEnv {
    pub backend: Arc<dyn Backend>,
    pub mbr_metric: Arc<dyn Metric>,
    pub eval_metric: Arc<dyn Metric>,
    /// Concurrent sentences; 0 uses every core.
    pub workers: usize,
}

/// Credentials and transport settings read from the environment.
#[derive(Debug, Clone, Default)]
pub struct Endpoints {
    pub backend_url: Option<String>,
    pub backend_token: Option<String>,
    pub metric_token: Option<String>,
    pub retry: RetryPolicy,
}

impl RunEnv {
    pub fn from_config(cfg: &RunConfig, endpoints: &Endpoints, workers: usize) -> Result<Self, PipelineError> {
        let backend: Arc<dyn Backend> = match &cfg.backend {
            BackendSpec::Mock { table } => Arc::new(MockBackend::new(MockTable::load(table)?)?),
            BackendSpec::Http { url } => {
                let url = url.clone().or_else(|| endpoints.backend_url.clone()).ok_or_else(|| {
                    PipelineError::Config(format!("http backend needs a url (or {})", HttpBackend::URL_ENV))
                })?;
                Arc::new(HttpBackend::new(
                    url,
                    endpoints.backend_token.clone(),
                    endpoints.retry,
                    Duration::from_secs(300),
                ))
            }
        };
        let metric = |s: &str| -> Result<Arc<dyn Metric>, PipelineError> {
            let spec: MetricSpec = s.parse().map_err(PipelineError::Config)?;
            Ok(spec.build(endpoints.metric_token.clone(), endpoints.retry))
        };
        Ok(Self {
            backend,
            mbr_metric: metric(&cfg.mbr.metric)?,
            eval_metric: metric(&cfg.evaluation.metric)?,
            workers,
        })
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| PipelineError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

//! Demonstration pools: loading, CDS quality buckets and selection.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {reason}")]
    Validation { line: usize, reason: String },
    #[error("cross-entropy lists differ in length ({base} vs {trusted})")]
    LengthMismatch { base: usize, trusted: usize },
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("filter `{filter}` leaves {available} demonstrations, {requested} requested")]
    InsufficientPool { filter: String, available: usize, requested: usize },
    #[error("no demonstration in the pool carries `{0}`")]
    MissingMetadata(&'static str),
    #[error("k must be at least 1")]
    ZeroK,
}

/// A source/target pair with optional quality and style metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub source: String,
    pub target: String,
    #[serde(default, alias = "cds_score", skip_serializing_if = "Option::is_none")]
    pub cds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variety: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formality: Option<String>,
}

pub const FORMALITY_LEVELS: [&str; 2] = ["formal", "informal"];

impl Demonstration {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self { source: source.into(), target: target.into(), cds: None, variety: None, formality: None }
    }

    pub fn with_cds(mut self, cds: f64) -> Self {
        self.cds = Some(cds);
        self
    }

    pub fn with_variety(mut self, v: impl Into<String>) -> Self {
        self.variety = Some(v.into());
        self
    }

    pub fn with_formality(mut self, f: impl Into<String>) -> Self {
        self.formality = Some(f.into());
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.source.trim().is_empty() {
            return Err("empty source".into());
        }
        if self.target.trim().is_empty() {
            return Err("empty target".into());
        }
        if let Some(c) = self.cds {
            if !(0.0..=1.0).contains(&c) {
                return Err(format!("cds {c} outside [0, 1]"));
            }
        }
        if let Some(v) = &self.variety {
            if v.is_empty() || v.chars().any(char::is_whitespace) {
                return Err(format!("unknown variety tag `{v}`"));
            }
        }
        if let Some(f) = &self.formality {
            if !FORMALITY_LEVELS.contains(&f.as_str()) {
                return Err(format!("unknown formality tag `{f}`"));
            }
        }
        Ok(())
    }

    pub fn tag(&self, axis: StyleAxis) -> Option<&str> {
        match axis {
            StyleAxis::Variety => self.variety.as_deref(),
            StyleAxis::Formality => self.formality.as_deref(),
        }
    }
}

/// Validated, immutable collection of demonstrations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoPool {
    entries: Vec<Demonstration>,
    lines: Vec<usize>,
}

impl DemoPool {
    pub fn new(entries: Vec<Demonstration>) -> Result<Self, PoolError> {
        for (i, d) in entries.iter().enumerate() {
            d.validate().map_err(|reason| PoolError::Validation { line: i + 1, reason })?;
        }
        let lines = (1..=entries.len()).collect();
        Ok(Self { entries, lines })
    }

    /// Reads JSONL, one demonstration per non-blank line.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, PoolError> {
        let mut entries = Vec::new();
        let mut lines = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| PoolError::Parse { line: line_no, message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let demo: Demonstration =
                serde_json::from_str(&line).map_err(|e| PoolError::Parse { line: line_no, message: e.to_string() })?;
            demo.validate().map_err(|reason| PoolError::Validation { line: line_no, reason })?;
            entries.push(demo);
            lines.push(line_no);
        }
        Ok(Self { entries, lines })
    }

    pub fn entries(&self) -> &[Demonstration] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Source line of entry `i` (1-based).
    pub fn line_of(&self, i: usize) -> Option<usize> {
        self.lines.get(i).copied()
    }

    pub fn stats(&self, cutoffs: BucketCutoffs) -> PoolStats {
        let mut stats = PoolStats { count: self.len(), ..Default::default() };
        for d in &self.entries {
            if let Some(c) = d.cds {
                stats.with_cds += 1;
                match cutoffs.assign(c) {
                    Ok(CdsBucket::Low) => stats.buckets.low += 1,
                    Ok(CdsBucket::Mid) => stats.buckets.mid += 1,
                    Ok(CdsBucket::High) => stats.buckets.high += 1,
                    Err(_) => {}
                }
            }
            if let Some(v) = &d.variety {
                *stats.varieties.entry(v.clone()).or_default() += 1;
            }
            if let Some(f) = &d.formality {
                *stats.formality.entry(f.clone()).or_default() += 1;
            }
        }
        stats
    }

    /// Copy of the pool with CDS scores replaced.
    pub fn with_cds_scores(&self, scores: &[f64]) -> Result<Self, PoolError> {
        if scores.len() != self.len() {
            return Err(PoolError::LengthMismatch { base: self.len(), trusted: scores.len() });
        }
        let mut out = self.clone();
        for (d, &s) in out.entries.iter_mut().zip(scores) {
            d.cds = Some(s);
        }
        for (i, d) in out.entries.iter().enumerate() {
            d.validate().map_err(|reason| PoolError::Validation { line: out.lines[i], reason })?;
        }
        Ok(out)
    }
}

pub fn load_pool(path: &Path) -> Result<DemoPool, PoolError> {
    let file = File::open(path).map_err(|source| PoolError::Io { path: path.display().to_string(), source })?;
    DemoPool::from_reader(BufReader::new(file))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub low: usize,
    pub mid: usize,
    pub high: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub count: usize,
    pub with_cds: usize,
    pub buckets: BucketCounts,
    pub varieties: BTreeMap<String, usize>,
    pub formality: BTreeMap<String, usize>,
}

/// Raw CDS: `ce_base - ce_trusted` per example.
pub fn cds_scores(ce_base: &[f64], ce_trusted: &[f64]) -> Result<Vec<f64>, PoolError> {
    if ce_base.len() != ce_trusted.len() {
        return Err(PoolError::LengthMismatch { base: ce_base.len(), trusted: ce_trusted.len() });
    }
    ce_base
        .iter()
        .zip(ce_trusted)
        .map(|(b, t)| {
            let raw = b - t;
            if raw.is_finite() {
                Ok(raw)
            } else {
                Err(PoolError::NonFinite(raw))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedCds {
    pub scores: Vec<f64>,
    /// All raw values were equal (or fewer than two); every score is 0.5.
    pub degenerate: bool,
}

/// Min-max normalization onto `[0, 1]`.
pub fn normalize_cds(raw: &[f64]) -> Result<NormalizedCds, PoolError> {
    if let Some(&bad) = raw.iter().find(|x| !x.is_finite()) {
        return Err(PoolError::NonFinite(bad));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raw.len() < 2 || min >= max {
        if !raw.is_empty() {
            log::warn!("degenerate CDS range over {} scores; assigning 0.5", raw.len());
        }
        return Ok(NormalizedCds { scores: vec![0.5; raw.len()], degenerate: true });
    }
    let span = max - min;
    let scores = raw.iter().map(|x| ((x - min) / span).clamp(0.0, 1.0)).collect();
    Ok(NormalizedCds { scores, degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CdsBucket {
    Low,
    Mid,
    High,
}

impl CdsBucket {
    pub const ALL: [CdsBucket; 3] = [CdsBucket::Low, CdsBucket::Mid, CdsBucket::High];

    pub fn name(self) -> &'static str {
        match self {
            CdsBucket::Low => "low",
            CdsBucket::Mid => "mid",
            CdsBucket::High => "high",
        }
    }
}

impl fmt::Display for CdsBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CdsBucket {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "low" => Ok(CdsBucket::Low),
            "mid" => Ok(CdsBucket::Mid),
            "high" => Ok(CdsBucket::High),
            other => Err(format!("unknown bucket `{other}`")),
        }
    }
}

/// Bucket boundaries: `[0, low_mid)`, `[low_mid, mid_high)`, `[mid_high, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketCutoffs {
    pub low_mid: f64,
    pub mid_high: f64,
}

impl Default for BucketCutoffs {
    fn default() -> Self {
        Self::THIRDS
    }
}

impl BucketCutoffs {
    pub const THIRDS: Self = Self { low_mid: 1.0 / 3.0, mid_high: 2.0 / 3.0 };
    pub const DECIMAL: Self = Self { low_mid: 0.33, mid_high: 0.66 };

    pub fn assign(&self, score: f64) -> Result<CdsBucket, PoolError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(PoolError::OutOfRange(score));
        }
        Ok(if score < self.low_mid {
            CdsBucket::Low
        } else if score < self.mid_high {
            CdsBucket::Mid
        } else {
            CdsBucket::High
        })
    }
}

/// Bucket under the default thirds partition.
pub fn assign_bucket(score: f64) -> Result<CdsBucket, PoolError> {
    BucketCutoffs::THIRDS.assign(score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleAxis {
    Variety,
    Formality,
}

impl StyleAxis {
    pub fn name(self) -> &'static str {
        match self {
            StyleAxis::Variety => "variety",
            StyleAxis::Formality => "formality",
        }
    }
}

impl std::str::FromStr for StyleAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "variety" => Ok(StyleAxis::Variety),
            "formality" => Ok(StyleAxis::Formality),
            other => Err(format!("unknown style axis `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionStrategy {
    Uniform,
    Bucket { bucket: CdsBucket },
    TagMatched { axis: StyleAxis, value: String },
    TagMismatched { axis: StyleAxis, value: String },
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionStrategy::Uniform => f.write_str("uniform"),
            SelectionStrategy::Bucket { bucket } => write!(f, "cds={bucket}"),
            SelectionStrategy::TagMatched { axis, value } => write!(f, "{}={value}", axis.name()),
            SelectionStrategy::TagMismatched { axis, value } => write!(f, "{}!={value}", axis.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k: usize,
    pub strategy: SelectionStrategy,
    #[serde(default)]
    pub cutoffs: BucketCutoffs,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { k: 5, strategy: SelectionStrategy::Uniform, cutoffs: BucketCutoffs::THIRDS }
    }
}

impl SelectionConfig {
    /// Pool indices passing the strategy filter, in pool order.
    pub fn eligible(&self, pool: &DemoPool) -> Result<Vec<usize>, PoolError> {
        let entries = pool.entries();
        let keep: Box<dyn Fn(&Demonstration) -> bool> = match &self.strategy {
            SelectionStrategy::Uniform => Box::new(|_| true),
            SelectionStrategy::Bucket { bucket } => {
                if entries.iter().all(|d| d.cds.is_none()) {
                    return Err(PoolError::MissingMetadata("cds"));
                }
                let (bucket, cutoffs) = (*bucket, self.cutoffs);
                Box::new(move |d| d.cds.and_then(|c| cutoffs.assign(c).ok()) == Some(bucket))
            }
            SelectionStrategy::TagMatched { axis, value } | SelectionStrategy::TagMismatched { axis, value } => {
                let axis = *axis;
                if entries.iter().all(|d| d.tag(axis).is_none()) {
                    return Err(PoolError::MissingMetadata(axis.name()));
                }
                let matched = matches!(self.strategy, SelectionStrategy::TagMatched { .. });
                let value = value.clone();
                Box::new(move |d| match d.tag(axis) {
                    Some(t) => (t == value) == matched,
                    None => false,
                })
            }
        };
        Ok(entries.iter().enumerate().filter(|(_, d)| keep(d)).map(|(i, _)| i).collect())
    }

    /// Checks that the filter leaves at least `k` entries.
    pub fn check(&self, pool: &DemoPool) -> Result<usize, PoolError> {
        if self.k == 0 {
            return Err(PoolError::ZeroK);
        }
        let available = self.eligible(pool)?.len();
        if available < self.k {
            return Err(PoolError::InsufficientPool {
                filter: self.strategy.to_string(),
                available,
                requested: self.k,
            });
        }
        Ok(available)
    }
}

/// Draws `k` distinct eligible pool indices, in sampled order.
pub fn select_indices<R: Rng + ?Sized>(
    pool: &DemoPool,
    cfg: &SelectionConfig,
    rng: &mut R,
) -> Result<Vec<usize>, PoolError> {
    if cfg.k == 0 {
        return Err(PoolError::ZeroK);
    }
    let eligible = cfg.eligible(pool)?;
    if eligible.len() < cfg.k {
        return Err(PoolError::InsufficientPool {
            filter: cfg.strategy.to_string(),
            available: eligible.len(),
            requested: cfg.k,
        });
    }
    Ok(index::sample(rng, eligible.len(), cfg.k).into_iter().map(|i| eligible[i]).collect())
}

pub fn select_demonstrations<R: Rng + ?Sized>(
    pool: &DemoPool,
    cfg: &SelectionConfig,
    rng: &mut R,
) -> Result<Vec<Demonstration>, PoolError> {
    Ok(select_indices(pool, cfg, rng)?.into_iter().map(|i| pool.entries()[i].clone()).collect())
}

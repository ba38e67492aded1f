//! Minimum Bayes risk selection over sampled candidates.
//!
//! Every candidate is scored as a hypothesis against every candidate as a
//! pseudo-reference; the candidate with the highest mean utility wins, ties
//! going to the lowest index.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::metrics::{Metric, MetricError};

#[derive(Debug, Error)]
pub enum MbrError {
    #[error("no candidates")]
    Empty,
    #[error("utility u(candidate {i}, candidate {j}) failed: {source}")]
    MetricFailure {
        i: usize,
        j: usize,
        #[source]
        source: MetricError,
    },
    #[error("utility u(candidate {i}, candidate {j}) is not finite ({value})")]
    NonFinite { i: usize, j: usize, value: f64 },
}

/// `values[i * n + j] = u(candidates[i], candidates[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityMatrix {
    n: usize,
    values: Vec<f64>,
    pub metric: String,
}

impl UtilityMatrix {
    pub fn from_values(n: usize, values: Vec<f64>, metric: impl Into<String>) -> Self {
        assert_eq!(values.len(), n * n, "utility matrix must be {n}x{n}");
        Self { n, values, metric: metric.into() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbrResult {
    pub selected_index: usize,
    pub selected_text: String,
    pub expected_utilities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MbrOptions {
    /// Leave the hypothesis out of its own pseudo-reference set.
    #[serde(default)]
    pub exclude_self: bool,
}

fn check(i: usize, j: usize, r: Result<f64, MetricError>) -> Result<f64, MbrError> {
    match r {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(value) => Err(MbrError::NonFinite { i, j, value }),
        Err(source) => Err(MbrError::MetricFailure { i, j, source }),
    }
}

/// Scores the `pairs` (index pairs into `texts`), pair-parallel for local
/// metrics and one batch per row otherwise.
fn score_pairs(
    texts: &[&str],
    pairs: &[(usize, usize)],
    metric: &dyn Metric,
    exec: Execution,
) -> Result<Vec<f64>, MbrError> {
    if metric.is_local() {
        return exec.try_map_range(pairs.len(), |p| {
            let (i, j) = pairs[p];
            check(i, j, metric.score(texts[i], texts[j]))
        });
    }
    let mut out = Vec::with_capacity(pairs.len());
    for row in pairs.chunk_by(|a, b| a.0 == b.0) {
        let batch: Vec<(&str, &str)> = row.iter().map(|&(i, j)| (texts[i], texts[j])).collect();
        let (i0, j0) = row[0];
        let scores = metric.score_batch(&batch).map_err(|source| MbrError::MetricFailure { i: i0, j: j0, source })?;
        if scores.len() != row.len() {
            return Err(MbrError::MetricFailure {
                i: i0,
                j: j0,
                source: MetricError::LengthMismatch { expected: row.len(), actual: scores.len() },
            });
        }
        for (&(i, j), v) in row.iter().zip(scores) {
            out.push(check(i, j, Ok(v))?);
        }
    }
    Ok(out)
}

/// Full N×N utility matrix. Each distinct `(hyp, ref)` string pair is scored
/// once; symmetric metrics score only one orientation.
pub fn compute_utility_matrix(
    candidates: &[String],
    metric: &dyn Metric,
    exec: Execution,
) -> Result<UtilityMatrix, MbrError> {
    if candidates.is_empty() {
        return Err(MbrError::Empty);
    }
    let n = candidates.len();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut first: Vec<usize> = Vec::new();
    let ids: Vec<usize> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            *slot.entry(c.as_str()).or_insert_with(|| {
                first.push(i);
                first.len() - 1
            })
        })
        .collect();
    let u = first.len();
    let symmetric = metric.symmetric();
    let pairs: Vec<(usize, usize)> = (0..u)
        .flat_map(|a| (if symmetric { a } else { 0 }..u).map(move |b| (a, b)))
        .map(|(a, b)| (first[a], first[b]))
        .collect();
    let texts: Vec<&str> = candidates.iter().map(String::as_str).collect();
    let scored = score_pairs(&texts, &pairs, metric, exec)?;

    let mut unique = vec![0.0; u * u];
    for (&(i, j), v) in pairs.iter().zip(scored) {
        let (a, b) = (ids[i], ids[j]);
        unique[a * u + b] = v;
        if symmetric {
            unique[b * u + a] = v;
        }
    }
    let mut values = Vec::with_capacity(n * n);
    for &a in &ids {
        values.extend(ids.iter().map(|&b| unique[a * u + b]));
    }
    Ok(UtilityMatrix::from_values(n, values, metric.name()))
}

/// Scores all N² pairs directly, with no sharing between duplicates.
pub fn compute_utility_matrix_uncached(
    candidates: &[String],
    metric: &dyn Metric,
    exec: Execution,
) -> Result<UtilityMatrix, MbrError> {
    if candidates.is_empty() {
        return Err(MbrError::Empty);
    }
    let n = candidates.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let texts: Vec<&str> = candidates.iter().map(String::as_str).collect();
    let values = score_pairs(&texts, &pairs, metric, exec)?;
    Ok(UtilityMatrix::from_values(n, values, metric.name()))
}

/// Mean utility of each row, summed left to right.
pub fn expected_utilities(matrix: &UtilityMatrix, opts: MbrOptions) -> Vec<f64> {
    let n = matrix.n();
    (0..n)
        .map(|i| {
            let row = matrix.row(i);
            if opts.exclude_self && n > 1 {
                let sum: f64 = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
                sum / (n - 1) as f64
            } else {
                row.iter().sum::<f64>() / n as f64
            }
        })
        .collect()
}

/// Index of the maximum, lowest index among values within rounding of it.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * max.abs().max(1.0);
    values.iter().position(|v| *v >= max - tol).unwrap_or(0)
}

pub fn select_from_matrix(candidates: &[String], matrix: &UtilityMatrix, opts: MbrOptions) -> MbrResult {
    let expected_utilities = expected_utilities(matrix, opts);
    let selected_index = argmax_lowest(&expected_utilities);
    MbrResult { selected_index, selected_text: candidates[selected_index].clone(), expected_utilities }
}

/// MBR selection with self included among the pseudo-references.
pub fn mbr_select(candidates: &[String], metric: &dyn Metric) -> Result<MbrResult, MbrError> {
    mbr_select_with(candidates, metric, MbrOptions::default(), Execution::default())
}

pub fn mbr_select_with(
    candidates: &[String],
    metric: &dyn Metric,
    opts: MbrOptions,
    exec: Execution,
) -> Result<MbrResult, MbrError> {
    let matrix = compute_utility_matrix(candidates, metric, exec)?;
    Ok(select_from_matrix(candidates, &matrix, opts))
}

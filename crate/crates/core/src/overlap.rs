//! Target-side train/test contamination auditing.
//!
//! A reference of at least `n` tokens is contaminated when any of its
//! `n`-token windows occurs in the training corpus. A shorter reference is
//! contaminated when it occurs as a contiguous run anywhere in the corpus.
//! Hash hits are always confirmed against the stored corpus tokens, so the
//! reported overlap is exact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::text::{ngram_hashes, window_hash, TokenId, Tokenizer};

#[derive(Debug, Error)]
pub enum OverlapError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("n-gram size must be at least 1")]
    InvalidN,
    #[error("training document {index}: {message}")]
    Document { index: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapConfig {
    pub n: usize,
    /// Apply the short-reference rule on raw characters instead of tokens.
    pub char_substring: bool,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self { n: 15, char_substring: false }
    }
}

const SHARDS: usize = 64;

/// Hash table over all `len`-token windows of a corpus, storing one position
/// per distinct window content.
#[derive(Debug, Default)]
struct GramTable {
    len: usize,
    shards: Vec<HashMap<u64, usize>>,
    /// Hashes shared by windows with different contents.
    collisions: HashMap<u64, Vec<usize>>,
}

impl GramTable {
    fn build(corpus: &[TokenId], docs: &[(usize, usize)], len: usize, exec: Execution) -> Self {
        let per_doc: Vec<Vec<(u64, usize)>> = exec.map(docs, |&(start, end)| {
            ngram_hashes(&corpus[start..end], len).into_iter().enumerate().map(|(i, h)| (h, start + i)).collect()
        });
        let mut buckets: Vec<Vec<(u64, usize)>> = vec![Vec::new(); SHARDS];
        for (h, pos) in per_doc.into_iter().flatten() {
            buckets[(h % SHARDS as u64) as usize].push((h, pos));
        }
        let built = exec.map(&buckets, |bucket| {
            let mut map: HashMap<u64, usize> = HashMap::with_capacity(bucket.len());
            let mut collisions: HashMap<u64, Vec<usize>> = HashMap::new();
            for &(h, pos) in bucket {
                let window = &corpus[pos..pos + len];
                match map.get(&h) {
                    None => {
                        map.insert(h, pos);
                    }
                    Some(&first) if &corpus[first..first + len] == window => {}
                    Some(_) => {
                        let extra = collisions.entry(h).or_default();
                        if !extra.iter().any(|&p| &corpus[p..p + len] == window) {
                            extra.push(pos);
                        }
                    }
                }
            }
            (map, collisions)
        });
        let mut table = GramTable { len, shards: Vec::with_capacity(SHARDS), collisions: HashMap::new() };
        for (map, collisions) in built {
            table.shards.push(map);
            table.collisions.extend(collisions);
        }
        table
    }

    fn distinct(&self) -> usize {
        self.shards.iter().map(HashMap::len).sum::<usize>() + self.collisions.values().map(Vec::len).sum::<usize>()
    }

    fn contains_hashed(&self, corpus: &[TokenId], h: u64, window: &[TokenId]) -> bool {
        debug_assert_eq!(window.len(), self.len);
        let same = |p: usize| &corpus[p..p + self.len] == window;
        match self.shards[(h % SHARDS as u64) as usize].get(&h) {
            None => false,
            Some(&p) if same(p) => true,
            Some(_) => self.collisions.get(&h).is_some_and(|v| v.iter().any(|&p| same(p))),
        }
    }

    fn contains(&self, corpus: &[TokenId], window: &[TokenId]) -> bool {
        self.contains_hashed(corpus, window_hash(window), window)
    }
}

/// Frozen n-gram index over a training corpus.
///
/// Tables for the short-reference rule (run lengths below `n`) are built on
/// first use; queries are safe to issue from many threads.
#[derive(Debug)]
pub struct NGramIndex {
    cfg: OverlapConfig,
    corpus: Vec<TokenId>,
    docs: Vec<(usize, usize)>,
    texts: Option<Vec<String>>,
    table: GramTable,
    short: Vec<OnceLock<GramTable>>,
    exec: Execution,
}

impl NGramIndex {
    /// Tokenizes and indexes every document.
    pub fn build<I, E>(
        docs: I,
        cfg: OverlapConfig,
        tokenizer: &dyn Tokenizer,
        exec: Execution,
    ) -> Result<Self, OverlapError>
    where
        I: IntoIterator<Item = Result<String, E>>,
        E: std::fmt::Display,
    {
        if cfg.n == 0 {
            return Err(OverlapError::InvalidN);
        }
        let texts: Vec<String> = docs
            .into_iter()
            .enumerate()
            .map(|(index, d)| d.map_err(|e| OverlapError::Document { index, message: e.to_string() }))
            .collect::<Result<_, _>>()?;
        let encoded = exec.map(&texts, |t| tokenizer.encode(t));
        let mut corpus = Vec::with_capacity(encoded.iter().map(|s| s.len()).sum());
        let mut spans = Vec::with_capacity(encoded.len());
        for seq in encoded {
            let start = corpus.len();
            corpus.extend_from_slice(&seq);
            spans.push((start, corpus.len()));
        }
        let table = GramTable::build(&corpus, &spans, cfg.n, exec);
        Ok(Self {
            cfg,
            short: (1..cfg.n).map(|_| OnceLock::new()).collect(),
            texts: cfg.char_substring.then_some(texts),
            corpus,
            docs: spans,
            table,
            exec,
        })
    }

    pub fn config(&self) -> OverlapConfig {
        self.cfg
    }

    pub fn n(&self) -> usize {
        self.cfg.n
    }

    pub fn documents(&self) -> usize {
        self.docs.len()
    }

    pub fn corpus_tokens(&self) -> usize {
        self.corpus.len()
    }

    /// Distinct `n`-token windows indexed.
    pub fn len(&self) -> usize {
        self.table.distinct()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether this exact `n`-token window occurs in the corpus.
    pub fn contains_window(&self, window: &[TokenId]) -> bool {
        window.len() == self.cfg.n && self.table.contains(&self.corpus, window)
    }

    /// Whether `run` occurs contiguously inside one corpus document.
    pub fn contains_run(&self, run: &[TokenId]) -> bool {
        let m = run.len();
        if m == 0 {
            return false;
        }
        if m == self.cfg.n {
            return self.contains_window(run);
        }
        if m > self.cfg.n {
            return self.corpus_contains_long(run);
        }
        let table = self.short[m - 1].get_or_init(|| GramTable::build(&self.corpus, &self.docs, m, self.exec));
        table.contains(&self.corpus, run)
    }

    fn corpus_contains_long(&self, run: &[TokenId]) -> bool {
        // a run longer than n is present only if its first n-window is
        if !self.contains_window(&run[..self.cfg.n]) {
            return false;
        }
        self.docs.iter().any(|&(s, e)| self.corpus[s..e].windows(run.len()).any(|w| w == run))
    }

    /// Contamination test for a tokenized reference.
    pub fn is_contaminated(&self, reference: &[TokenId]) -> bool {
        let n = self.cfg.n;
        if reference.len() >= n {
            ngram_hashes(reference, n)
                .into_iter()
                .enumerate()
                .any(|(i, h)| self.table.contains_hashed(&self.corpus, h, &reference[i..i + n]))
        } else {
            self.contains_run(reference)
        }
    }

    /// Contamination test for reference text; honors the character-level
    /// short-reference mode.
    pub fn is_contaminated_text(&self, reference: &str, tokenizer: &dyn Tokenizer) -> bool {
        let tokens = tokenizer.encode(reference);
        match &self.texts {
            Some(texts) if tokens.len() < self.cfg.n => {
                !reference.is_empty() && texts.iter().any(|t| t.contains(reference))
            }
            _ => self.is_contaminated(&tokens),
        }
    }
}

/// Aggregate contamination of a reference set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub total: usize,
    pub matched: usize,
    pub percent: f64,
}

impl OverlapReport {
    pub fn from_counts(matched: usize, total: usize) -> Self {
        let percent = if total == 0 { 0.0 } else { (matched as f64 * 100.0) / total as f64 };
        Self { total, matched, percent }
    }
}

/// Per-reference contamination flags.
pub fn contamination_flags(
    test_refs: &[String],
    index: &NGramIndex,
    tokenizer: &dyn Tokenizer,
    exec: Execution,
) -> Vec<bool> {
    exec.map(test_refs, |r| index.is_contaminated_text(r, tokenizer))
}

pub fn overlap_report(
    test_refs: &[String],
    index: &NGramIndex,
    tokenizer: &dyn Tokenizer,
    exec: Execution,
) -> Result<OverlapReport, OverlapError> {
    if test_refs.is_empty() {
        return Err(OverlapError::EmptyTestSet);
    }
    let matched = contamination_flags(test_refs, index, tokenizer, exec).into_iter().filter(|&b| b).count();
    Ok(OverlapReport::from_counts(matched, test_refs.len()))
}

/// One row of the overlap table: a language pair and its two directions.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRow {
    pub pair: String,
    pub forward: Option<f64>,
    pub backward: Option<f64>,
}

/// Plain-text table with `Language Pair | Forward | Backward` columns.
pub fn render_overlap_table(rows: &[OverlapRow]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |p| format!("{p:.1}%"));
    let width = rows.iter().map(|r| r.pair.len()).max().unwrap_or(0).max("Language Pair".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}", "Language Pair", "Forward", "Backward");
    for r in rows {
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}", r.pair, cell(r.forward), cell(r.backward));
    }
    out
}

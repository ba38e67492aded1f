//! Corpus BLEU ("bleu-lite"): 4-gram, exponential smoothing, 13a-style
//! tokenization. Close to the usual reporting setup but not bit-identical to it.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

use super::MetricError;

const MAX_ORDER: usize = 4;

fn rules() -> &'static [(Regex, &'static str); 4] {
    static RULES: OnceLock<[(Regex, &'static str); 4]> = OnceLock::new();
    RULES.get_or_init(|| {
        [
            (Regex::new(r"([\{-~\[-`\x20-&\(-\+:-@/])").unwrap(), " $1 "),
            (Regex::new(r"([^0-9])([\.,])").unwrap(), "$1 $2 "),
            (Regex::new(r"([\.,])([^0-9])").unwrap(), " $1 $2"),
            (Regex::new(r"([0-9])(-)").unwrap(), "$1 $2 "),
        ]
    })
}

/// mteval-13a style tokenization.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    let mut s = line.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if s.contains('&') {
        s = s.replace("&quot;", "\"").replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">");
    }
    let mut s = format!(" {s} ");
    for (re, rep) in rules() {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub sys_len: usize,
    pub ref_len: usize,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_default() += 1;
    }
    m
}

/// Corpus BLEU on the 0..100 scale with full statistics.
pub fn corpus_bleu(hyps: &[String], refs: &[String]) -> Result<BleuScore, MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch { expected: refs.len(), actual: hyps.len() });
    }
    if hyps.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut sys_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let ht = tokenize_13a(h);
        let rt = tokenize_13a(r);
        sys_len += ht.len();
        ref_len += rt.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&ht, n);
            let rc = ngram_counts(&rt, n);
            totals[n - 1] += ht.len().saturating_sub(n - 1);
            matches[n - 1] += hc.iter().map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    let mut smooth = 1.0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            break;
        }
        if matches[n] == 0 {
            smooth *= 2.0;
            precisions[n] = 100.0 / (smooth * totals[n] as f64);
        } else {
            precisions[n] = 100.0 * matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if sys_len >= ref_len {
        1.0
    } else if sys_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / sys_len as f64).exp()
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| (p / 100.0).ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore { score, precisions, brevity_penalty, sys_len, ref_len, matches, totals })
}

/// Corpus BLEU score on the 0..100 scale.
pub fn bleu_smoothed(hyps: &[String], refs: &[String]) -> Result<f64, MetricError> {
    corpus_bleu(hyps, refs).map(|b| b.score)
}

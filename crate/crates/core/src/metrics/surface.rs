use std::collections::HashMap;

use super::{Metric, MetricError};

/// F1 over whitespace-token multisets.
///
/// Both sides empty scores 1.0; exactly one empty scores 0.0.
pub fn token_f1(hypothesis: &str, reference: &str) -> f64 {
    let hyp: Vec<&str> = hypothesis.split_whitespace().collect();
    let reference: Vec<&str> = reference.split_whitespace().collect();
    match (hyp.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::with_capacity(reference.len());
    for t in &reference {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &hyp {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    // 2PR/(P+R) with P = o/|h|, R = o/|r|
    2.0 * overlap as f64 / (hyp.len() + reference.len()) as f64
}

const CHRF_ORDER: usize = 6;
const CHRF_BETA: f64 = 2.0;

/// Clipped count of n-grams shared by `h` and `r`.
fn shared_ngrams(h: &[char], r: &[char], n: usize) -> usize {
    let mut hs: Vec<&[char]> = h.windows(n).collect();
    let mut rs: Vec<&[char]> = r.windows(n).collect();
    hs.sort_unstable();
    rs.sort_unstable();
    let (mut i, mut j, mut matches) = (0, 0, 0);
    while i < hs.len() && j < rs.len() {
        match hs[i].cmp(rs[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                matches += 1;
                i += 1;
                j += 1;
            }
        }
    }
    matches
}

/// chrF with character n-grams up to 6 and beta = 2, whitespace ignored.
///
/// Per-order F-scores are averaged over the orders both strings are long
/// enough to have; orders missing on either side are skipped.
pub fn chrf(hypothesis: &str, reference: &str) -> f64 {
    let hyp: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    let reference: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    match (hyp.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let b2 = CHRF_BETA * CHRF_BETA;
    let mut total = 0.0;
    let mut orders = 0usize;
    for n in 1..=CHRF_ORDER {
        if hyp.len() < n || reference.len() < n {
            break;
        }
        let matches = shared_ngrams(&hyp, &reference, n);
        let precision = matches as f64 / (hyp.len() + 1 - n) as f64;
        let recall = matches as f64 / (reference.len() + 1 - n) as f64;
        let denom = b2 * precision + recall;
        total += if denom > 0.0 { (1.0 + b2) * precision * recall / denom } else { 0.0 };
        orders += 1;
    }
    total / orders as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TokenF1;

impl Metric for TokenF1 {
    fn name(&self) -> String {
        "token-f1".into()
    }

    fn score(&self, hypothesis: &str, reference: &str) -> Result<f64, MetricError> {
        Ok(token_f1(hypothesis, reference))
    }

    fn symmetric(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ChrF;

impl Metric for ChrF {
    fn name(&self) -> String {
        "chrf".into()
    }

    fn score(&self, hypothesis: &str, reference: &str) -> Result<f64, MetricError> {
        Ok(chrf(hypothesis, reference))
    }
}

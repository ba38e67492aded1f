//! Controllability metrics: regional-variety lexical accuracy, the FRMT
//! aggregate and contrastive-phrase formality accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricError;

/// One English term with its surface forms per regional variety.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEntry {
    pub en: String,
    pub forms: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VarietyTermTable {
    pub entries: Vec<TermEntry>,
}

impl VarietyTermTable {
    pub fn validate(&self) -> Result<(), MetricError> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.forms.len() < 2 {
                return Err(MetricError::Invalid(format!("term entry {i} (`{}`) needs forms for two varieties", e.en)));
            }
            for (variety, forms) in &e.forms {
                if forms.is_empty() || forms.iter().any(|f| f.is_empty()) {
                    return Err(MetricError::MissingForms { entry: i, variety: variety.clone() });
                }
            }
        }
        Ok(())
    }
}

/// How hypotheses that contain both or neither variety's forms are scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexicalRule {
    pub neither_correct: bool,
    pub both_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalAccuracy {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub target_only: usize,
    pub other_only: usize,
    pub both: usize,
    pub neither: usize,
}

/// Fraction of hypotheses using the target variety's term forms.
///
/// `item_terms[i]` is the table entry for hypothesis `i`. A hypothesis is
/// correct when it contains a target form and no form exclusive to another
/// variety (unless `rule` says otherwise). Every item counts in the denominator.
pub fn lexical_accuracy(
    hyps: &[String],
    table: &VarietyTermTable,
    item_terms: &[usize],
    target_variety: &str,
    rule: LexicalRule,
) -> Result<LexicalAccuracy, MetricError> {
    if hyps.len() != item_terms.len() {
        return Err(MetricError::LengthMismatch { expected: item_terms.len(), actual: hyps.len() });
    }
    if hyps.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut out = LexicalAccuracy {
        accuracy: 0.0,
        correct: 0,
        total: hyps.len(),
        target_only: 0,
        other_only: 0,
        both: 0,
        neither: 0,
    };
    for (hyp, &entry_idx) in hyps.iter().zip(item_terms) {
        let entry = table
            .entries
            .get(entry_idx)
            .ok_or_else(|| MetricError::Invalid(format!("term entry {entry_idx} out of range")))?;
        let target_forms = entry
            .forms
            .get(target_variety)
            .filter(|f| !f.is_empty())
            .ok_or_else(|| MetricError::MissingForms { entry: entry_idx, variety: target_variety.to_string() })?;
        let others: Vec<&String> = entry
            .forms
            .iter()
            .filter(|(v, _)| v.as_str() != target_variety)
            .flat_map(|(_, fs)| fs)
            .filter(|f| !target_forms.contains(f))
            .collect();
        if !entry.forms.keys().any(|v| v != target_variety) {
            return Err(MetricError::MissingForms { entry: entry_idx, variety: "<other>".into() });
        }
        let has_target = target_forms.iter().any(|f| hyp.contains(f.as_str()));
        let has_other = others.iter().any(|f| hyp.contains(f.as_str()));
        let correct = match (has_target, has_other) {
            (true, false) => {
                out.target_only += 1;
                true
            }
            (false, true) => {
                out.other_only += 1;
                false
            }
            (true, true) => {
                out.both += 1;
                rule.both_correct
            }
            (false, false) => {
                out.neither += 1;
                rule.neither_correct
            }
        };
        out.correct += usize::from(correct);
    }
    out.accuracy = out.correct as f64 / out.total as f64;
    Ok(out)
}

/// Geometric mean over varieties of the arithmetic mean of each variety's
/// bucket-level scores.
pub fn frmt_score(per_variety: &BTreeMap<String, Vec<f64>>) -> Result<f64, MetricError> {
    if per_variety.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut means = Vec::with_capacity(per_variety.len());
    for scores in per_variety.values() {
        if scores.is_empty() {
            return Err(MetricError::EmptyInput);
        }
        if let Some(&neg) = scores.iter().find(|s| **s < 0.0 || s.is_nan()) {
            return Err(MetricError::NegativeScore(neg));
        }
        means.push(scores.iter().sum::<f64>() / scores.len() as f64);
    }
    if means.len() == 1 {
        return Ok(means[0]);
    }
    if means.contains(&0.0) {
        return Ok(0.0);
    }
    let log_mean = means.iter().map(|m| m.ln()).sum::<f64>() / means.len() as f64;
    Ok(log_mean.exp())
}

/// Reference text with its marked contrastive phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedText {
    pub text: String,
    pub phrases: Vec<String>,
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `[phrase]` or `[F]phrase[/F]` markers; returns the unmarked text and
/// the marked phrases.
pub fn parse_marked(annotated: &str) -> Result<MarkedText, String> {
    let mut text = String::new();
    let mut phrases = Vec::new();
    let mut rest = annotated;
    while let Some(open) = rest.find('[') {
        text.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let (phrase, tail) = if let Some(body) = after.strip_prefix("F]") {
            let close = body.find("[/F]").ok_or_else(|| format!("unterminated [F] marker in `{annotated}`"))?;
            (&body[..close], &body[close + 4..])
        } else {
            let close = after.find(']').ok_or_else(|| format!("unterminated [ marker in `{annotated}`"))?;
            (&after[..close], &after[close + 1..])
        };
        let phrase = normalize_ws(phrase);
        if !phrase.is_empty() {
            phrases.push(phrase.clone());
        }
        text.push_str(&phrase);
        rest = tail;
    }
    text.push_str(rest);
    Ok(MarkedText { text, phrases })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormalityLabel {
    Formal,
    Informal,
    Neutral,
}

impl std::str::FromStr for FormalityLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "formal" => Ok(FormalityLabel::Formal),
            "informal" => Ok(FormalityLabel::Informal),
            other => Err(format!("unknown formality level `{other}`")),
        }
    }
}

/// Contrastive formal/informal references for one source segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormalityAnnotatedRef {
    pub formal: MarkedText,
    pub informal: MarkedText,
    pub desired: FormalityLabel,
}

impl FormalityAnnotatedRef {
    pub fn parse(formal: &str, informal: &str, desired: FormalityLabel) -> Result<Self, String> {
        Ok(Self { formal: parse_marked(formal)?, informal: parse_marked(informal)?, desired })
    }

    /// Formal if only formal phrases occur, informal if only informal ones,
    /// neutral otherwise.
    pub fn label(&self, hypothesis: &str) -> FormalityLabel {
        let hyp = normalize_ws(hypothesis);
        let formal = self.formal.phrases.iter().any(|p| hyp.contains(p.as_str()));
        let informal = self.informal.phrases.iter().any(|p| hyp.contains(p.as_str()));
        match (formal, informal) {
            (true, false) => FormalityLabel::Formal,
            (false, true) => FormalityLabel::Informal,
            _ => FormalityLabel::Neutral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormalityReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub formal: usize,
    pub informal: usize,
    pub neutral: usize,
}

pub fn formality_accuracy(hyps: &[String], refs: &[FormalityAnnotatedRef]) -> Result<FormalityReport, MetricError> {
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch { expected: refs.len(), actual: hyps.len() });
    }
    if hyps.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut report =
        FormalityReport { accuracy: 0.0, correct: 0, total: hyps.len(), formal: 0, informal: 0, neutral: 0 };
    for (i, (hyp, r)) in hyps.iter().zip(refs).enumerate() {
        if r.formal.phrases.is_empty() || r.informal.phrases.is_empty() {
            return Err(MetricError::UnmarkedReference(i));
        }
        let label = r.label(hyp);
        match label {
            FormalityLabel::Formal => report.formal += 1,
            FormalityLabel::Informal => report.informal += 1,
            FormalityLabel::Neutral => report.neutral += 1,
        }
        report.correct += usize::from(label == r.desired);
    }
    report.accuracy = report.correct as f64 / report.total as f64;
    Ok(report)
}

use serde::{Deserialize, Serialize};

use super::{EvalSpec, PipelineError, TestItem};
use crate::metrics::{
    corpus_bleu, corpus_mean, formality_accuracy, lexical_accuracy, FormalityAnnotatedRef, FormalityLabel,
    FormalityReport, LexicalAccuracy, Metric, MetricError, VarietyTermTable,
};

/// Per-sentence scores; absent where the item lacks the needed annotation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexical_correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formality: Option<FormalityLabel>,
}

/// Aggregates over successful sentences; failed ones are only counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub evaluated: usize,
    pub failed: usize,
    pub quality_metric: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu_lite: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexical: Option<LexicalAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formality: Option<FormalityReport>,
}

impl EvalReport {
    /// Text table; scores ×100 at one decimal.
    pub fn render(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        let pct = |v: f64| format!("{:.1}", v * 100.0);
        if let Some(q) = self.quality {
            rows.push((self.quality_metric.clone(), pct(q)));
        }
        if let Some(b) = self.bleu_lite {
            rows.push(("bleu-lite".into(), format!("{b:.1}")));
        }
        if let Some(l) = &self.lexical {
            rows.push(("lexical accuracy".into(), pct(l.accuracy)));
        }
        if let Some(f) = &self.formality {
            rows.push(("formality accuracy".into(), pct(f.accuracy)));
        }
        rows.push(("failed".into(), format!("{} / {}", self.failed, self.total)));
        let mut out = format!("{:<20}{:>10}\n", "Metric", "Score");
        for (k, v) in rows {
            out.push_str(&format!("{k:<20}{v:>10}\n"));
        }
        out
    }
}

/// What to score and with which resources.
pub struct EvalContext<'a> {
    pub spec: &'a EvalSpec,
    pub metric: &'a dyn Metric,
    pub term_table: Option<&'a VarietyTermTable>,
}

/// Scores `hyps[i]` (None for failed sentences) against `items[i]`.
pub fn evaluate_outputs(
    hyps: &[Option<String>],
    items: &[TestItem],
    ctx: &EvalContext<'_>,
) -> Result<(EvalReport, Vec<ItemScores>), PipelineError> {
    if hyps.len() != items.len() {
        return Err(MetricError::LengthMismatch { expected: items.len(), actual: hyps.len() }.into());
    }
    let mut scores = vec![ItemScores::default(); items.len()];
    let ok: Vec<usize> = (0..items.len()).filter(|&i| hyps[i].is_some()).collect();
    let hyp = |i: usize| hyps[i].as_deref().unwrap_or_default();

    let with_ref: Vec<usize> = ok.iter().copied().filter(|&i| items[i].reference.is_some()).collect();
    let pairs: Vec<(&str, &str)> =
        with_ref.iter().map(|&i| (hyp(i), items[i].reference.as_deref().unwrap_or_default())).collect();
    let quality_scores = ctx.metric.score_batch(&pairs)?;
    if quality_scores.len() != pairs.len() {
        return Err(MetricError::LengthMismatch { expected: pairs.len(), actual: quality_scores.len() }.into());
    }
    for (&i, &q) in with_ref.iter().zip(&quality_scores) {
        scores[i].quality = Some(q);
    }
    let quality = if quality_scores.is_empty() { None } else { Some(corpus_mean(&quality_scores)?) };
    let bleu_lite = if ctx.spec.bleu && !pairs.is_empty() {
        let (h, r): (Vec<String>, Vec<String>) = pairs.iter().map(|(h, r)| (h.to_string(), r.to_string())).unzip();
        Some(corpus_bleu(&h, &r)?.score)
    } else {
        None
    };

    let lexical = match (&ctx.spec.lexical, ctx.term_table) {
        (Some(lex), Some(table)) => {
            let idx: Vec<usize> = ok.iter().copied().filter(|&i| items[i].term_entry.is_some()).collect();
            if idx.is_empty() {
                None
            } else {
                let entries: Vec<usize> = idx.iter().map(|&i| items[i].term_entry.unwrap_or_default()).collect();
                let texts: Vec<String> = idx.iter().map(|&i| hyp(i).to_string()).collect();
                for (k, &i) in idx.iter().enumerate() {
                    let one = lexical_accuracy(&texts[k..=k], table, &entries[k..=k], &lex.target_variety, lex.rule)?;
                    scores[i].lexical_correct = Some(one.correct == 1);
                }
                Some(lexical_accuracy(&texts, table, &entries, &lex.target_variety, lex.rule)?)
            }
        }
        (Some(_), None) => return Err(PipelineError::Config("lexical evaluation needs a term table".into())),
        _ => None,
    };

    let formality = match ctx.spec.formality {
        Some(desired) => {
            let idx: Vec<usize> = ok
                .iter()
                .copied()
                .filter(|&i| items[i].formal_ref.is_some() && items[i].informal_ref.is_some())
                .collect();
            if idx.is_empty() {
                None
            } else {
                let mut refs = Vec::with_capacity(idx.len());
                for &i in &idx {
                    let (f, inf) = (
                        items[i].formal_ref.as_deref().unwrap_or_default(),
                        items[i].informal_ref.as_deref().unwrap_or_default(),
                    );
                    let r = FormalityAnnotatedRef::parse(f, inf, desired)
                        .map_err(|m| PipelineError::Config(format!("item {i}: {m}")))?;
                    scores[i].formality = Some(r.label(hyp(i)));
                    refs.push(r);
                }
                let texts: Vec<String> = idx.iter().map(|&i| hyp(i).to_string()).collect();
                Some(formality_accuracy(&texts, &refs)?)
            }
        }
        None => None,
    };

    let report = EvalReport {
        total: items.len(),
        evaluated: ok.len(),
        failed: items.len() - ok.len(),
        quality_metric: ctx.metric.name(),
        quality,
        bleu_lite,
        lexical,
        formality,
    };
    Ok((report, scores))
}

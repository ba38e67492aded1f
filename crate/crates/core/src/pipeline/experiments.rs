use serde::{Deserialize, Serialize};

use super::eval::EvalReport;
use super::run::{pretty, translate_testset};
use super::{write_atomic, PipelineError, RunConfig, RunEnv, TestItem};
use crate::metrics::FormalityLabel;
use crate::pool::{load_pool, CdsBucket, SelectionConfig, SelectionStrategy, StyleAxis};

fn score_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", v * 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketResult {
    pub bucket: CdsBucket,
    pub report: EvalReport,
    pub over_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub buckets: Vec<BucketResult>,
}

impl SweepReport {
    pub fn over_threshold(&self) -> bool {
        self.buckets.iter().any(|b| b.over_threshold)
    }

    /// One row per bucket, Low to High.
    pub fn render(&self) -> String {
        let metric = self.buckets.first().map_or("quality", |b| b.report.quality_metric.as_str());
        let mut out = format!("{:<12}{:>12}{:>10}\n", "CDS bucket", metric, "failed");
        for b in &self.buckets {
            out.push_str(&format!(
                "{:<12}{:>12}{:>10}\n",
                b.bucket.name(),
                score_cell(b.report.quality),
                b.report.failed
            ));
        }
        out
    }
}

/// Runs the test set once per CDS bucket, drawing demonstrations only from
/// that bucket. Every bucket is checked before any run starts.
pub fn bucket_sweep(cfg: &RunConfig, items: &[TestItem], env: &RunEnv) -> Result<SweepReport, PipelineError> {
    cfg.validate()?;
    let pool = load_pool(&cfg.pool)?;
    let configs: Vec<(CdsBucket, SelectionConfig)> = CdsBucket::ALL
        .iter()
        .map(|&bucket| {
            (bucket, SelectionConfig { strategy: SelectionStrategy::Bucket { bucket }, ..cfg.selection.clone() })
        })
        .collect();
    for (_, sel) in &configs {
        sel.check(&pool)?;
    }
    let mut buckets = Vec::with_capacity(3);
    for (bucket, selection) in configs {
        let mut run = cfg.clone();
        run.selection = selection;
        if !cfg.output_dir.as_os_str().is_empty() {
            run.output_dir = cfg.output_dir.join(bucket.name());
        }
        let outcome = translate_testset(&run, items, env)?;
        buckets.push(BucketResult { bucket, report: outcome.manifest.report, over_threshold: outcome.over_threshold });
    }
    let report = SweepReport { buckets };
    if !cfg.output_dir.as_os_str().is_empty() {
        write_atomic(&cfg.output_dir.join("report.json"), pretty(&report).as_bytes())?;
        write_atomic(&cfg.output_dir.join("report.txt"), report.render().as_bytes())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleReport {
    pub axis: StyleAxis,
    pub value: String,
    pub matched: EvalReport,
    pub mismatched: EvalReport,
    pub over_threshold: bool,
}

impl StyleReport {
    pub fn axis_accuracy(report: &EvalReport, axis: StyleAxis) -> Option<f64> {
        match axis {
            StyleAxis::Variety => report.lexical.as_ref().map(|l| l.accuracy),
            StyleAxis::Formality => report.formality.as_ref().map(|f| f.accuracy),
        }
    }

    /// Matched and mismatched rows with quality and axis accuracy.
    pub fn render(&self) -> String {
        let acc = match self.axis {
            StyleAxis::Variety => "lexical acc.",
            StyleAxis::Formality => "formality acc.",
        };
        let metric = self.matched.quality_metric.as_str();
        let mut out = format!("{:<14}{:>12}{:>16}\n", "demos", metric, acc);
        for (name, r) in [("matched", &self.matched), ("mismatched", &self.mismatched)] {
            out.push_str(&format!(
                "{:<14}{:>12}{:>16}\n",
                name,
                score_cell(r.quality),
                score_cell(Self::axis_accuracy(r, self.axis))
            ));
        }
        out
    }
}

/// Runs with demonstrations whose `axis` tag equals `value` and with ones
/// whose tag differs, scoring the axis metric against `value` in both.
pub fn style_experiment(
    cfg: &RunConfig,
    items: &[TestItem],
    env: &RunEnv,
    axis: StyleAxis,
    value: &str,
) -> Result<StyleReport, PipelineError> {
    let mut base = cfg.clone();
    match axis {
        StyleAxis::Variety => {
            let lex = base.evaluation.lexical.as_mut().ok_or_else(|| {
                PipelineError::Config("variety experiments need evaluation.lexical (a term table)".into())
            })?;
            lex.target_variety = value.to_string();
        }
        StyleAxis::Formality => {
            let level: FormalityLabel = value.parse().map_err(PipelineError::Config)?;
            base.evaluation.formality = Some(level);
        }
    }
    base.validate()?;
    let pool = load_pool(&base.pool)?;
    let matched_sel = SelectionConfig {
        strategy: SelectionStrategy::TagMatched { axis, value: value.to_string() },
        ..cfg.selection.clone()
    };
    let mismatched_sel = SelectionConfig {
        strategy: SelectionStrategy::TagMismatched { axis, value: value.to_string() },
        ..cfg.selection.clone()
    };
    matched_sel.check(&pool)?;
    mismatched_sel.check(&pool)?;

    let mut reports = Vec::with_capacity(2);
    let mut over_threshold = false;
    for (name, selection) in [("matched", matched_sel), ("mismatched", mismatched_sel)] {
        let mut run = base.clone();
        run.selection = selection;
        if !cfg.output_dir.as_os_str().is_empty() {
            run.output_dir = cfg.output_dir.join(name);
        }
        let outcome = translate_testset(&run, items, env)?;
        over_threshold |= outcome.over_threshold;
        reports.push(outcome.manifest.report);
    }
    let mismatched = reports.pop().expect("two runs");
    let matched = reports.pop().expect("two runs");
    let report = StyleReport { axis, value: value.to_string(), matched, mismatched, over_threshold };
    if !cfg.output_dir.as_os_str().is_empty() {
        write_atomic(&cfg.output_dir.join("report.json"), pretty(&report).as_bytes())?;
        write_atomic(&cfg.output_dir.join("report.txt"), report.render().as_bytes())?;
    }
    Ok(report)
}

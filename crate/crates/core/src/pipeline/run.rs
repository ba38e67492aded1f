use serde::{Deserialize, Serialize};

use super::eval::{evaluate_outputs, EvalContext, EvalReport, ItemScores};
use super::{load_term_table, write_atomic, PipelineError, RunConfig, RunEnv, TestItem};
use crate::backend::BackendError;
use crate::exec::{with_workers, Execution};
use crate::mbr::{compute_utility_matrix, select_from_matrix};
use crate::pool::{load_pool, select_indices, DemoPool, SelectionConfig};
use crate::prompt::{parse_completion, render_prompt, RenderedPrompt};
use crate::seeding;
use crate::text::LanguagePair;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsedDemo {
    pub pool_index: usize,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub index: usize,
    pub source: String,
    pub status: RecordStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub demos: Vec<UsedDemo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    pub candidates: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_utility: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<String>,
    #[serde(default)]
    pub empty_completion: bool,
    #[serde(default)]
    pub scores: ItemScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub backend: String,
    pub mbr_metric: String,
    pub records: Vec<SentenceRecord>,
    pub report: EvalReport,
}

impl RunManifest {
    /// Writes manifest.json, records.jsonl, report.json and report.txt.
    pub fn write(&self, dir: &std::path::Path) -> Result<(), PipelineError> {
        write_atomic(&dir.join("manifest.json"), pretty(self).as_bytes())?;
        let mut lines = String::new();
        for r in &self.records {
            lines.push_str(&serde_json::to_string(r).expect("records serialize"));
            lines.push('\n');
        }
        write_atomic(&dir.join("records.jsonl"), lines.as_bytes())?;
        write_atomic(&dir.join("report.json"), pretty(&self.report).as_bytes())?;
        write_atomic(&dir.join("report.txt"), self.report.render().as_bytes())
    }
}

pub(super) fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// More sentences failed than `max_failure_rate` allows.
    pub over_threshold: bool,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.over_threshold {
            3
        } else {
            0
        }
    }
}

/// Demonstrations and prompt for sentence `index`; depends only on
/// `(seed, index)` and the pool.
fn sentence_prompt(
    pool: &DemoPool,
    selection: &SelectionConfig,
    pair: &LanguagePair,
    seed: u64,
    index: usize,
    source: &str,
) -> Result<(Vec<usize>, RenderedPrompt), PipelineError> {
    let mut rng = seeding::rng_for(seed, index as u64);
    let picked = select_indices(pool, selection, &mut rng)?;
    let demos: Vec<_> = picked.iter().map(|&i| pool.entries()[i].clone()).collect();
    let prompt = render_prompt(&demos, source, pair)?;
    Ok((picked, prompt))
}

fn backend_seed(seed: u64, index: usize) -> u64 {
    seeding::derive(seeding::derive(seed, index as u64), 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub index: usize,
    pub demos: Vec<usize>,
    pub prompt_hash: String,
}

/// One line of `build-prompts` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt: String,
    #[serde(rename = "ref", skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub meta: PromptMeta,
}

/// Renders the prompts a translate run with the same settings would send.
pub fn build_prompts(
    pool: &DemoPool,
    selection: &SelectionConfig,
    pair: &LanguagePair,
    seed: u64,
    items: &[TestItem],
) -> Result<Vec<PromptRecord>, PipelineError> {
    selection.check(pool)?;
    items
        .iter()
        .enumerate()
        .map(|(index, item)| {
            let (demos, prompt) = sentence_prompt(pool, selection, pair, seed, index, &item.source)?;
            Ok(PromptRecord {
                meta: PromptMeta { index, demos, prompt_hash: prompt.hash() },
                prompt: prompt.text,
                reference: item.reference.clone(),
            })
        })
        .collect()
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    env: &'a RunEnv,
    pool: &'a DemoPool,
}

fn translate_one(ctx: &Ctx<'_>, index: usize, item: &TestItem) -> SentenceRecord {
    let mut rec = SentenceRecord {
        index,
        source: item.source.clone(),
        status: RecordStatus::Failed,
        error: None,
        demos: Vec::new(),
        prompt_hash: None,
        candidates: Vec::new(),
        selected_index: None,
        expected_utility: None,
        selected: None,
        empty_completion: false,
        scores: ItemScores::default(),
    };
    let cfg = ctx.cfg;
    let (picked, prompt) = match sentence_prompt(ctx.pool, &cfg.selection, &cfg.pair, cfg.rng_seed, index, &item.source)
    {
        Ok(p) => p,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.demos = picked
        .iter()
        .map(|&i| {
            let d = &ctx.pool.entries()[i];
            UsedDemo { pool_index: i, source: d.source.clone(), target: d.target.clone() }
        })
        .collect();
    rec.prompt_hash = Some(prompt.hash());

    let generated = ctx.env.backend.generate(&prompt.text, &cfg.generation, backend_seed(cfg.rng_seed, index));
    let set = match generated {
        Ok(s) if s.candidates.len() == cfg.generation.expected_candidates() => s,
        Ok(s) => {
            let e = BackendError::LengthMismatch {
                expected: cfg.generation.expected_candidates(),
                actual: s.candidates.len(),
            };
            rec.error = Some(e.to_string());
            rec.candidates = s.candidates;
            return rec;
        }
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.candidates = set.candidates;

    let (selected_index, expected_utility) = if rec.candidates.len() == 1 {
        (0, None)
    } else {
        let matrix = match compute_utility_matrix(&rec.candidates, ctx.env.mbr_metric.as_ref(), Execution::Parallel) {
            Ok(m) => m,
            Err(e) => {
                rec.error = Some(e.to_string());
                return rec;
            }
        };
        let r = select_from_matrix(&rec.candidates, &matrix, cfg.mbr_options());
        (r.selected_index, Some(r.expected_utilities[r.selected_index]))
    };
    let completion = parse_completion(&rec.candidates[selected_index]);
    rec.selected_index = Some(selected_index);
    rec.expected_utility = expected_utility;
    rec.empty_completion = completion.empty;
    rec.selected = Some(completion.text);
    rec.status = RecordStatus::Ok;
    rec
}

/// Translates `items` and, when `cfg.output_dir` is set, writes the run files.
///
/// Pool and backend problems fail the whole run; per-sentence errors mark the
/// sentence failed.
pub fn translate_testset(cfg: &RunConfig, items: &[TestItem], env: &RunEnv) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(PipelineError::Config("test set is empty".into()));
    }
    let pool = load_pool(&cfg.pool)?;
    cfg.selection.check(&pool)?;
    let term_table = cfg.evaluation.lexical.as_ref().map(|l| load_term_table(&l.term_table)).transpose()?;
    env.backend.health()?;

    let ctx = Ctx { cfg, env, pool: &pool };
    let records: Vec<SentenceRecord> =
        with_workers(env.workers, || Execution::Parallel.map_range(items.len(), |i| translate_one(&ctx, i, &items[i])));
    let failed = records.iter().filter(|r| r.status == RecordStatus::Failed).count();
    for r in records.iter().filter(|r| r.status == RecordStatus::Failed) {
        log::warn!("sentence {} failed: {}", r.index, r.error.as_deref().unwrap_or("unknown error"));
    }

    let hyps: Vec<Option<String>> = records.iter().map(|r| r.selected.clone()).collect();
    let ectx = EvalContext { spec: &cfg.evaluation, metric: env.eval_metric.as_ref(), term_table: term_table.as_ref() };
    let (report, per_item) = evaluate_outputs(&hyps, items, &ectx)?;
    let records = records.into_iter().zip(per_item).map(|(mut r, s)| {
        r.scores = s;
        r
    });
    let manifest = RunManifest {
        config: cfg.clone(),
        backend: env.backend.identity(),
        mbr_metric: env.mbr_metric.name(),
        records: records.collect(),
        report,
    };
    if !cfg.output_dir.as_os_str().is_empty() {
        manifest.write(&cfg.output_dir)?;
    }
    let over_threshold = failed as f64 > cfg.max_failure_rate * items.len() as f64;
    Ok(RunOutcome { manifest, over_threshold })
}

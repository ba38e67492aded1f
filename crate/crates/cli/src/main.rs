use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fewshot_core::backend::{DecodingMode, HttpBackend};
use fewshot_core::exec::{with_workers, Execution};
use fewshot_core::http::RetryPolicy;
use fewshot_core::mbr::{mbr_select_with, MbrOptions};
use fewshot_core::metrics::{FormalityLabel, LexicalRule, MetricSpec, RemoteMetric};
use fewshot_core::overlap::{
    overlap_report, render_overlap_table, NGramIndex, OverlapConfig, OverlapReport, OverlapRow,
};
use fewshot_core::pipeline::{
    bucket_sweep, build_prompts, evaluate_outputs, load_term_table, load_test_items, style_experiment,
    translate_testset, write_atomic, BackendSpec, Endpoints, EvalContext, LexicalEval, PipelineError, RunConfig,
    RunEnv,
};
use fewshot_core::pool::{
    cds_scores, load_pool, normalize_cds, BucketCutoffs, CdsBucket, SelectionStrategy, StyleAxis,
};
use fewshot_core::text::{tokenizer_by_name, LanguagePair};
use fewshot_core::ul2::{
    write_binary_record, write_jsonl_record, ExampleFormat, PreprocessConfig, Ul2Error, Ul2Preprocessor,
};

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn validation(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, err: err.into() }
}

fn runtime(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: err.into() }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure { code: e.exit_code() as u8, err: e.into() }
    }
}

type CmdResult = Result<u8, Failure>;

#[derive(Parser)]
#[command(name = "fewshot", version, about = "Few-shot translation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn raw documents into UL2 training examples.
    Preprocess(PreprocessArgs),
    /// Measure how many test references share an n-gram with a training corpus.
    AuditOverlap(AuditArgs),
    /// Inspect, validate or bucket a demonstration pool.
    Pool {
        #[command(subcommand)]
        command: PoolCommand,
    },
    /// Render the prompts a translate run would send.
    BuildPrompts(BuildPromptsArgs),
    /// Translate a test set and write the run directory.
    Translate(RunArgs),
    /// Pick the minimum Bayes risk candidate from each line of candidates.
    MbrRerank(MbrArgs),
    /// Score hypotheses against a test set.
    Evaluate(EvaluateArgs),
    /// Translate once per CDS bucket.
    BucketSweep(RunArgs),
    /// Compare style-matched and mismatched demonstrations.
    StyleExp(StyleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Binary,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Text files, one document per line.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: Format,
    /// JSON preprocessing config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_sequence_length: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_examples: Option<u64>,
    #[arg(long, default_value = "wordpiece")]
    tokenizer: String,
    /// Where to write dataset statistics (stdout when absent).
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct AuditArgs {
    /// Training corpus files, one document per line.
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    /// References, one per line.
    #[arg(long)]
    test: PathBuf,
    /// References of the reverse direction, for the table's second column.
    #[arg(long)]
    backward_test: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    n: usize,
    /// Match references shorter than n tokens as raw substrings.
    #[arg(long)]
    char_substring: bool,
    #[arg(long, default_value = "wordpiece")]
    tokenizer: String,
    /// Row label for the table.
    #[arg(long, default_value = "test")]
    label: String,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum PoolCommand {
    /// Print entry, bucket and tag counts as JSON.
    Stats {
        #[arg(long)]
        pool: PathBuf,
        /// Use 0.33/0.66 instead of thirds.
        #[arg(long)]
        decimal_cutoffs: bool,
    },
    /// Check every entry and report the first problem.
    Validate {
        #[arg(long)]
        pool: PathBuf,
    },
    /// Attach normalized CDS scores computed from two cross-entropy files.
    Bucket {
        #[arg(long)]
        pool: PathBuf,
        /// Base-model cross-entropies, one per line in pool order.
        #[arg(long)]
        ce_base: PathBuf,
        /// Trusted-model cross-entropies, one per line in pool order.
        #[arg(long)]
        ce_trusted: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        decimal_cutoffs: bool,
    },
}

#[derive(Args)]
struct SelectionArgs {
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Draw only from this CDS bucket.
    #[arg(long)]
    bucket: Option<CdsBucket>,
    #[arg(long)]
    source_lang: Option<String>,
    #[arg(long)]
    target_lang: Option<String>,
}

#[derive(Args)]
struct BuildPromptsArgs {
    /// Run config supplying pool, pair, selection and seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
    /// JSONL destination (stdout when absent).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Args)]
struct EndpointArgs {
    #[arg(long, env = HttpBackend::URL_ENV)]
    backend_url: Option<String>,
    #[arg(long, env = HttpBackend::TOKEN_ENV, hide_env_values = true)]
    backend_token: Option<String>,
    #[arg(long, env = RemoteMetric::TOKEN_ENV, hide_env_values = true)]
    metric_token: Option<String>,
    #[arg(long, default_value_t = 5)]
    max_attempts: u32,
}

impl EndpointArgs {
    fn endpoints(&self) -> Endpoints {
        Endpoints {
            backend_url: self.backend_url.clone(),
            backend_token: self.backend_token.clone(),
            metric_token: self.metric_token.clone(),
            retry: RetryPolicy { max_attempts: self.max_attempts.max(1), ..RetryPolicy::default() },
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Test set: JSONL items or one source sentence per line.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Lookup table for the mock backend.
    #[arg(long)]
    mock_table: Option<PathBuf>,
    #[arg(long)]
    num_samples: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Beam search with this beam size instead of sampling.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    mbr_metric: Option<String>,
    #[arg(long)]
    exclude_self: bool,
    #[arg(long)]
    eval_metric: Option<String>,
    #[arg(long)]
    max_failure_rate: Option<f64>,
    /// Concurrent sentences; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[command(flatten)]
    endpoints: EndpointArgs,
}

#[derive(Args)]
struct StyleArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    axis: StyleAxis,
    /// Target variety (e.g. taiwan) or formality level.
    #[arg(long)]
    value: String,
    /// Term table for lexical accuracy (variety axis).
    #[arg(long)]
    term_table: Option<PathBuf>,
}

#[derive(Args)]
struct MbrArgs {
    /// JSONL with a "candidates" array per line (stdin when absent).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "token-f1")]
    metric: String,
    #[arg(long)]
    exclude_self: bool,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[command(flatten)]
    endpoints: EndpointArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Hypotheses, one per line, aligned with the test set.
    #[arg(long)]
    hyps: PathBuf,
    /// Test items (JSONL) with references and annotations.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "chrf")]
    metric: String,
    #[arg(long)]
    no_bleu: bool,
    #[arg(long)]
    term_table: Option<PathBuf>,
    /// Variety scored for lexical accuracy.
    #[arg(long, requires = "term_table")]
    variety: Option<String>,
    /// Count hypotheses with neither variety's term as correct.
    #[arg(long)]
    neither_correct: bool,
    /// Count hypotheses with both varieties' terms as correct.
    #[arg(long)]
    both_correct: bool,
    /// Desired formality level.
    #[arg(long)]
    formality: Option<FormalityLabel>,
    /// JSON report destination.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    endpoints: EndpointArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Preprocess(a) => preprocess(a),
        Command::AuditOverlap(a) => audit_overlap(a),
        Command::Pool { command } => pool(command),
        Command::BuildPrompts(a) => build_prompts_cmd(a),
        Command::Translate(a) => translate(a),
        Command::MbrRerank(a) => mbr_rerank(a),
        Command::Evaluate(a) => evaluate(a),
        Command::BucketSweep(a) => sweep(a),
        Command::StyleExp(a) => style(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).with_context(|| format!("opening {}", path.display())).map_err(validation)
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    open(path)?
        .lines()
        .collect::<io::Result<Vec<_>>>()
        .with_context(|| format!("reading {}", path.display()))
        .map_err(runtime)
}

fn non_empty_lines(path: &Path) -> Result<Vec<String>, Failure> {
    Ok(read_lines(path)?.into_iter().filter(|l| !l.trim().is_empty()).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(runtime)?;
    }
    File::create(path).map(BufWriter::new).with_context(|| format!("creating {}", path.display())).map_err(runtime)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()).map_err(Failure::from),
        None => io::stdout().write_all(text.as_bytes()).context("writing stdout").map_err(runtime),
    }
}

fn preprocess(a: PreprocessArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(validation)?;
            serde_json::from_str::<PreprocessConfig>(&text)
                .with_context(|| format!("parsing {}", p.display()))
                .map_err(validation)?
        }
        None => PreprocessConfig::default(),
    };
    if let Some(n) = a.max_sequence_length {
        cfg.max_sequence_length = n;
    }
    if let Some(s) = a.seed {
        cfg.rng_seed = s;
    }
    if a.max_examples.is_some() {
        cfg.max_examples = a.max_examples;
    }
    let tokenizer = tokenizer_by_name(&a.tokenizer).map_err(|e| validation(anyhow!("{e}")))?;
    let pre = Ul2Preprocessor::new(cfg, tokenizer.as_ref()).map_err(validation)?;
    let readers = a.input.iter().map(|p| open(p)).collect::<Result<Vec<_>, _>>()?;
    let docs = readers.into_iter().flat_map(|r| r.lines());
    let format = match a.format {
        Format::Jsonl => ExampleFormat::Jsonl,
        Format::Binary => ExampleFormat::Binary,
    };
    let mut out = create(&a.output)?;
    let stats = with_workers(a.workers, || {
        pre.build(docs, Execution::Parallel, |ex| {
            match format {
                ExampleFormat::Jsonl => write_jsonl_record(&mut out, ex),
                ExampleFormat::Binary => write_binary_record(&mut out, ex),
            }
            .map_err(Ul2Error::from)
        })
    })
    .map_err(|e| match e {
        Ul2Error::Io(_) | Ul2Error::Source { .. } => runtime(e),
        other => validation(other),
    })?;
    out.flush().context("flushing output").map_err(runtime)?;
    write_out(a.stats.as_deref(), &to_json(&stats))?;
    Ok(0)
}

#[derive(Serialize)]
struct AuditReport {
    n: usize,
    forward: OverlapReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    backward: Option<OverlapReport>,
}

fn audit_overlap(a: AuditArgs) -> CmdResult {
    let tokenizer = tokenizer_by_name(&a.tokenizer).map_err(|e| validation(anyhow!("{e}")))?;
    let forward_refs = non_empty_lines(&a.test)?;
    let backward_refs = a.backward_test.as_deref().map(non_empty_lines).transpose()?;
    let readers = a.corpus.iter().map(|p| open(p)).collect::<Result<Vec<_>, _>>()?;
    let docs = readers.into_iter().flat_map(|r| r.lines());
    let cfg = OverlapConfig { n: a.n, char_substring: a.char_substring };
    let report = with_workers(a.workers, || -> Result<AuditReport, Failure> {
        let index = NGramIndex::build(docs, cfg, tokenizer.as_ref(), Execution::Parallel).map_err(|e| match e {
            fewshot_core::overlap::OverlapError::InvalidN => validation(e),
            other => runtime(other),
        })?;
        let score = |refs: &[String]| overlap_report(refs, &index, tokenizer.as_ref(), Execution::Parallel);
        Ok(AuditReport {
            n: a.n,
            forward: score(&forward_refs).map_err(validation)?,
            backward: backward_refs.as_deref().map(score).transpose().map_err(validation)?,
        })
    })?;
    let json = to_json(&report);
    if let Some(p) = &a.output {
        write_atomic(p, json.as_bytes())?;
    }
    if a.json {
        write_out(None, &json)?;
    } else {
        let row = OverlapRow {
            pair: a.label,
            forward: Some(report.forward.percent),
            backward: report.backward.map(|b| b.percent),
        };
        write_out(None, &render_overlap_table(&[row]))?;
    }
    Ok(0)
}

fn cutoffs(decimal: bool) -> BucketCutoffs {
    if decimal {
        BucketCutoffs::DECIMAL
    } else {
        BucketCutoffs::THIRDS
    }
}

fn read_floats(path: &Path) -> Result<Vec<f64>, Failure> {
    non_empty_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| validation(anyhow!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn pool(command: PoolCommand) -> CmdResult {
    match command {
        PoolCommand::Stats { pool, decimal_cutoffs } => {
            let p = load_pool(&pool).map_err(validation)?;
            write_out(None, &to_json(&p.stats(cutoffs(decimal_cutoffs))))?;
        }
        PoolCommand::Validate { pool } => {
            let p = load_pool(&pool).map_err(validation)?;
            println!("{}: {} entries ok", pool.display(), p.len());
        }
        PoolCommand::Bucket { pool, ce_base, ce_trusted, output, decimal_cutoffs } => {
            let p = load_pool(&pool).map_err(validation)?;
            let raw = cds_scores(&read_floats(&ce_base)?, &read_floats(&ce_trusted)?).map_err(validation)?;
            let normalized = normalize_cds(&raw).map_err(validation)?;
            let scored = p.with_cds_scores(&normalized.scores).map_err(validation)?;
            let mut text = String::new();
            for d in scored.entries() {
                text.push_str(&serde_json::to_string(d).expect("plain data serializes"));
                text.push('\n');
            }
            write_atomic(&output, text.as_bytes())?;
            let counts = scored.stats(cutoffs(decimal_cutoffs)).buckets;
            println!("low {}  mid {}  high {}", counts.low, counts.mid, counts.high);
            if normalized.degenerate {
                eprintln!("warning: all CDS scores equal; every entry is mid");
            }
        }
    }
    Ok(0)
}

/// Fills selection fields of `cfg` from flags.
fn apply_selection(cfg: &mut RunConfig, s: &SelectionArgs) -> Result<(), Failure> {
    if let Some(p) = &s.pool {
        cfg.pool = p.clone();
    }
    if let Some(k) = s.k {
        cfg.selection.k = k;
    }
    if let Some(seed) = s.seed {
        cfg.rng_seed = seed;
    }
    if let Some(bucket) = s.bucket {
        cfg.selection.strategy = SelectionStrategy::Bucket { bucket };
    }
    if s.source_lang.is_some() || s.target_lang.is_some() {
        let source = s.source_lang.clone().unwrap_or_else(|| cfg.pair.source_name.clone());
        let target = s.target_lang.clone().unwrap_or_else(|| cfg.pair.target_name.clone());
        cfg.pair = LanguagePair::new(source, target).map_err(validation)?;
    }
    Ok(())
}

fn base_config(config: Option<&Path>, pool: Option<&PathBuf>, backend: BackendSpec) -> Result<RunConfig, Failure> {
    match config {
        Some(p) => Ok(RunConfig::load(p)?),
        None => {
            let pool = pool.ok_or_else(|| validation(anyhow!("either --config or --pool is required")))?;
            Ok(RunConfig::new(pool.clone(), backend, PathBuf::new()))
        }
    }
}

fn build_prompts_cmd(a: BuildPromptsArgs) -> CmdResult {
    let placeholder = BackendSpec::Http { url: None };
    let mut cfg = base_config(a.config.as_deref(), a.selection.pool.as_ref(), placeholder)?;
    apply_selection(&mut cfg, &a.selection)?;
    let pool = load_pool(&cfg.pool).map_err(validation)?;
    let items = load_test_items(&a.test)?;
    let records = build_prompts(&pool, &cfg.selection, &cfg.pair, cfg.rng_seed, &items)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("plain data serializes"));
        text.push('\n');
    }
    write_out(a.output.as_deref(), &text)?;
    Ok(0)
}

fn run_config(a: &RunArgs) -> Result<RunConfig, Failure> {
    let backend = match (a.backend, &a.mock_table) {
        (Some(BackendKind::Http), _) => BackendSpec::Http { url: None },
        (_, Some(table)) => BackendSpec::Mock { table: table.clone() },
        (Some(BackendKind::Mock), None) => return Err(validation(anyhow!("--backend mock needs --mock-table"))),
        (None, None) => BackendSpec::Http { url: None },
    };
    let mut cfg = base_config(a.config.as_deref(), a.selection.pool.as_ref(), backend.clone())?;
    if a.config.is_some() && (a.backend.is_some() || a.mock_table.is_some()) {
        cfg.backend = match (&cfg.backend, backend) {
            (BackendSpec::Http { url: Some(u) }, BackendSpec::Http { url: None }) => {
                BackendSpec::Http { url: Some(u.clone()) }
            }
            (_, b) => b,
        };
    }
    apply_selection(&mut cfg, &a.selection)?;
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(n) = a.num_samples {
        cfg.generation.num_samples = n;
    }
    if let Some(t) = a.temperature {
        cfg.generation.temperature = t;
    }
    if let Some(beam_size) = a.beam {
        let length_alpha = match cfg.generation.mode {
            DecodingMode::Beam { length_alpha, .. } => length_alpha,
            DecodingMode::Sample => match DecodingMode::DEFAULT_BEAM {
                DecodingMode::Beam { length_alpha, .. } => length_alpha,
                DecodingMode::Sample => unreachable!(),
            },
        };
        cfg.generation.mode = DecodingMode::Beam { beam_size, length_alpha };
    }
    if let Some(m) = &a.mbr_metric {
        cfg.mbr.metric = m.clone();
    }
    if a.exclude_self {
        cfg.mbr.exclude_self = true;
    }
    if let Some(m) = &a.eval_metric {
        cfg.evaluation.metric = m.clone();
    }
    if let Some(r) = a.max_failure_rate {
        cfg.max_failure_rate = r;
    }
    Ok(cfg)
}

fn prepare(a: &RunArgs) -> Result<(RunConfig, Vec<fewshot_core::pipeline::TestItem>, RunEnv), Failure> {
    let cfg = run_config(a)?;
    cfg.validate()?;
    let items = load_test_items(&a.test)?;
    let env = RunEnv::from_config(&cfg, &a.endpoints.endpoints(), a.workers)?;
    Ok((cfg, items, env))
}

fn threshold_code(over: bool) -> u8 {
    if over {
        eprintln!("error: failed sentences exceed max_failure_rate");
        3
    } else {
        0
    }
}

fn translate(a: RunArgs) -> CmdResult {
    let (cfg, items, env) = prepare(&a)?;
    let outcome = translate_testset(&cfg, &items, &env)?;
    print!("{}", outcome.manifest.report.render());
    Ok(threshold_code(outcome.over_threshold))
}

fn sweep(a: RunArgs) -> CmdResult {
    let (cfg, items, env) = prepare(&a)?;
    let report = bucket_sweep(&cfg, &items, &env)?;
    print!("{}", report.render());
    Ok(threshold_code(report.over_threshold()))
}

fn style(a: StyleArgs) -> CmdResult {
    let mut cfg = run_config(&a.run)?;
    if let Some(table) = &a.term_table {
        let rule = cfg.evaluation.lexical.as_ref().map(|l| l.rule).unwrap_or_default();
        cfg.evaluation.lexical = Some(LexicalEval { term_table: table.clone(), target_variety: a.value.clone(), rule });
    }
    cfg.validate()?;
    let items = load_test_items(&a.run.test)?;
    let env = RunEnv::from_config(&cfg, &a.run.endpoints.endpoints(), a.run.workers)?;
    let report = style_experiment(&cfg, &items, &env, a.axis, &a.value)?;
    print!("{}", report.render());
    Ok(threshold_code(report.over_threshold))
}

#[derive(serde::Deserialize)]
struct CandidateLine {
    candidates: Vec<String>,
}

#[derive(Serialize)]
struct RerankLine {
    selected: String,
    index: usize,
    expected_utilities: Vec<f64>,
}

fn mbr_rerank(a: MbrArgs) -> CmdResult {
    let spec: MetricSpec = a.metric.parse().map_err(|e: String| validation(anyhow!(e)))?;
    let metric = spec.build(a.endpoints.endpoints().metric_token, a.endpoints.endpoints().retry);
    let mut input = String::new();
    match &a.input {
        Some(p) => open(p)?.read_to_string(&mut input),
        None => io::stdin().read_to_string(&mut input),
    }
    .context("reading candidates")
    .map_err(runtime)?;
    let name = a.input.as_ref().map_or_else(|| "stdin".to_string(), |p| p.display().to_string());
    let mut sets = Vec::new();
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CandidateLine =
            serde_json::from_str(line).map_err(|e| validation(anyhow!("{name} line {}: {e}", i + 1)))?;
        if parsed.candidates.is_empty() {
            return Err(validation(anyhow!("{name} line {}: no candidates", i + 1)));
        }
        sets.push(parsed.candidates);
    }
    let opts = MbrOptions { exclude_self: a.exclude_self };
    let mut out = String::new();
    with_workers(a.workers, || -> Result<(), Failure> {
        for cands in &sets {
            let r = mbr_select_with(cands, metric.as_ref(), opts, Execution::Parallel).map_err(runtime)?;
            let line = RerankLine {
                selected: r.selected_text,
                index: r.selected_index,
                expected_utilities: r.expected_utilities,
            };
            out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
            out.push('\n');
        }
        Ok(())
    })?;
    write_out(a.output.as_deref(), &out)?;
    Ok(0)
}

fn evaluate(a: EvaluateArgs) -> CmdResult {
    let items = load_test_items(&a.test)?;
    let hyps: Vec<Option<String>> = read_lines(&a.hyps)?.into_iter().map(Some).collect();
    if hyps.len() != items.len() {
        return Err(validation(anyhow!("{} hypotheses for {} test items", hyps.len(), items.len())));
    }
    let spec: MetricSpec = a.metric.parse().map_err(|e: String| validation(anyhow!(e)))?;
    let endpoints = a.endpoints.endpoints();
    let metric = spec.build(endpoints.metric_token, endpoints.retry);
    let mut eval =
        fewshot_core::pipeline::EvalSpec { metric: a.metric.clone(), bleu: !a.no_bleu, ..Default::default() };
    let term_table = match &a.term_table {
        Some(p) => {
            let variety = a.variety.clone().ok_or_else(|| validation(anyhow!("--term-table needs --variety")))?;
            let rule = LexicalRule { neither_correct: a.neither_correct, both_correct: a.both_correct };
            eval.lexical = Some(LexicalEval { term_table: p.clone(), target_variety: variety, rule });
            Some(load_term_table(p)?)
        }
        None => None,
    };
    if a.formality == Some(FormalityLabel::Neutral) {
        return Err(validation(anyhow!("desired formality must be formal or informal")));
    }
    eval.formality = a.formality;
    let ctx = EvalContext { spec: &eval, metric: metric.as_ref(), term_table: term_table.as_ref() };
    let (report, _) = evaluate_outputs(&hyps, &items, &ctx)?;
    if let Some(p) = &a.output {
        write_atomic(p, to_json(&report).as_bytes())?;
    }
    print!("{}", report.render());
    Ok(0)
}

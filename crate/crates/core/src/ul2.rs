//! Decoder-only training examples from a mixture of denoising objectives.
//!
//! Each chunk of a document receives exactly one objective drawn from
//! [`MixtureWeights`]: causal LM, prefix LM, or one of two span-corruption
//! configurations. Examples are kept as `(input, target, loss_mask)` and export
//! flat as `input ++ [separator] ++ target` with loss on target positions only;
//! causal examples have no input and no separator.

use std::io::{self, Read, Write};
use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::seeding::{self, Rng as SeededRng};
use crate::text::{TokenId, TokenSequence, Tokenizer};

#[derive(Debug, Error)]
pub enum Ul2Error {
    #[error("sequence of {len} tokens is too short (need at least {min})")]
    DegenerateInput { len: usize, min: usize },
    #[error("mixture weights must be non-negative and sum to 1 (sum = {sum})")]
    InvalidWeights { sum: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{spans} spans need {needed} sentinels but the tokenizer reserves {available}")]
    TooManySpans { spans: usize, needed: usize, available: usize },
    #[error("document {index}: {message}")]
    Source { index: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Span-corruption hyperparameters: fraction of tokens corrupted and mean span length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanCorruptionConfig {
    pub noise_density: f64,
    pub mean_span_length: f64,
}

impl SpanCorruptionConfig {
    /// Short, sparse spans: `(0.15, 3)`.
    pub const SHORT: Self = Self { noise_density: 0.15, mean_span_length: 3.0 };
    /// Long, dense spans: `(0.5, 32)`.
    pub const LONG: Self = Self { noise_density: 0.5, mean_span_length: 32.0 };

    pub fn new(noise_density: f64, mean_span_length: f64) -> Result<Self, Ul2Error> {
        let cfg = Self { noise_density, mean_span_length };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Ul2Error> {
        if !(self.noise_density > 0.0 && self.noise_density < 1.0) {
            return Err(Ul2Error::InvalidConfig(format!("noise density {} outside (0, 1)", self.noise_density)));
        }
        if !(self.mean_span_length >= 1.0 && self.mean_span_length.is_finite()) {
            return Err(Ul2Error::InvalidConfig(format!("mean span length {} below 1", self.mean_span_length)));
        }
        Ok(())
    }

    /// Corrupted-token count for a sequence of `len` tokens.
    pub fn noise_tokens(&self, len: usize) -> usize {
        let n = (self.noise_density * len as f64).round() as usize;
        n.min(len.saturating_sub(1))
    }

    /// Number of noise spans for a sequence of `len` tokens.
    pub fn span_count(&self, len: usize) -> usize {
        let noise = self.noise_tokens(len);
        if noise == 0 {
            return 0;
        }
        let spans = ((noise as f64 / self.mean_span_length).round() as usize).max(1);
        spans.min(noise).min(len - noise + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Causal,
    Prefix,
    SpanA,
    SpanB,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] =
        [ObjectiveKind::Causal, ObjectiveKind::Prefix, ObjectiveKind::SpanA, ObjectiveKind::SpanB];

    pub fn tag(self) -> u8 {
        match self {
            ObjectiveKind::Causal => 0,
            ObjectiveKind::Prefix => 1,
            ObjectiveKind::SpanA => 2,
            ObjectiveKind::SpanB => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(usize::from(tag)).copied()
    }
}

/// Objective probabilities, in `(causal, prefix, span_a, span_b)` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub causal: f64,
    pub prefix: f64,
    pub span_a: f64,
    pub span_b: f64,
}

impl Default for MixtureWeights {
    fn default() -> Self {
        Self { causal: 0.6, prefix: 0.2, span_a: 0.1, span_b: 0.1 }
    }
}

impl MixtureWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.causal, self.prefix, self.span_a, self.span_b]
    }

    pub fn validate(&self) -> Result<(), Ul2Error> {
        let w = self.as_array();
        let sum: f64 = w.iter().sum();
        if w.iter().any(|x| x.is_nan() || *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Ul2Error::InvalidWeights { sum });
        }
        Ok(())
    }
}

/// Categorical draw of one objective.
pub fn sample_objective<R: Rng + ?Sized>(weights: &MixtureWeights, rng: &mut R) -> Result<ObjectiveKind, Ul2Error> {
    weights.validate()?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let w = weights.as_array();
    for (kind, p) in ObjectiveKind::ALL.iter().zip(w) {
        acc += p;
        if u < acc {
            return Ok(*kind);
        }
    }
    // u landed in the rounding gap above the cumulative sum: last non-zero class
    let last = w.iter().rposition(|p| *p > 0.0).unwrap_or(0);
    Ok(ObjectiveKind::ALL[last])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input: TokenSequence,
    pub target: TokenSequence,
    pub loss_mask: Vec<bool>,
    pub kind: ObjectiveKind,
}

impl TrainingExample {
    /// Length of the flat decoder-only form.
    pub fn packed_len(&self) -> usize {
        let sep = usize::from(!self.input.is_empty());
        self.input.len() + sep + self.target.len()
    }

    /// Flat `input ++ [separator] ++ target` with a per-position loss mask.
    pub fn flatten(&self, separator: TokenId) -> (Vec<TokenId>, Vec<bool>) {
        let mut ids = Vec::with_capacity(self.packed_len());
        let mut mask = Vec::with_capacity(self.packed_len());
        if !self.input.is_empty() {
            ids.extend_from_slice(&self.input);
            ids.push(separator);
            mask.resize(ids.len(), false);
        }
        ids.extend_from_slice(&self.target);
        mask.extend_from_slice(&self.loss_mask);
        (ids, mask)
    }
}

/// Uniformly random composition of `total` into `parts` positive integers.
fn random_composition<R: Rng + ?Sized>(total: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(parts >= 1 && total >= parts);
    if parts == 1 {
        return vec![total];
    }
    let mut cuts: Vec<usize> = index::sample(rng, total - 1, parts - 1).into_iter().map(|i| i + 1).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(total - prev);
    out
}

/// Positions of the noise spans for a `len`-token sequence.
///
/// Span lengths form a uniform random composition of the noise budget; the
/// clean tokens are split into `spans + 1` gaps where interior gaps hold at
/// least one token, so spans never touch.
pub fn noise_span_layout<R: Rng + ?Sized>(len: usize, cfg: &SpanCorruptionConfig, rng: &mut R) -> Vec<Range<usize>> {
    let spans = cfg.span_count(len);
    if spans == 0 {
        return Vec::new();
    }
    let noise = cfg.noise_tokens(len);
    let clean = len - noise;
    let span_lens = random_composition(noise, spans, rng);
    let mut gaps = random_composition(clean + 2, spans + 1, rng);
    gaps[0] -= 1;
    gaps[spans] -= 1;

    let mut out = Vec::with_capacity(spans);
    let mut pos = gaps[0];
    for (i, l) in span_lens.into_iter().enumerate() {
        out.push(pos..pos + l);
        pos += l + gaps[i + 1];
    }
    debug_assert_eq!(pos, len);
    out
}

/// Replaces noise spans with sentinels.
///
/// Returns `(input, target)` where the input holds `sentinel(i)` in place of
/// span `i` and the target is `sentinel(0) span_0 sentinel(1) span_1 ...
/// sentinel(k)` with `sentinel(k)` terminating.
pub fn corrupt_spans<R: Rng + ?Sized>(
    seq: &[TokenId],
    cfg: &SpanCorruptionConfig,
    tokenizer: &dyn Tokenizer,
    rng: &mut R,
) -> Result<(TokenSequence, TokenSequence), Ul2Error> {
    if seq.len() < 2 {
        return Err(Ul2Error::DegenerateInput { len: seq.len(), min: 2 });
    }
    cfg.validate()?;
    let spans = noise_span_layout(seq.len(), cfg, rng);
    apply_spans(seq, &spans, tokenizer)
}

fn apply_spans(
    seq: &[TokenId],
    spans: &[Range<usize>],
    tokenizer: &dyn Tokenizer,
) -> Result<(TokenSequence, TokenSequence), Ul2Error> {
    // the last sentinel is the packing separator
    let available = tokenizer.num_sentinels().saturating_sub(1) as usize;
    if spans.len() + 1 > available {
        return Err(Ul2Error::TooManySpans { spans: spans.len(), needed: spans.len() + 1, available });
    }
    let sentinel = |k: usize| tokenizer.sentinel(k as u32).expect("checked against num_sentinels");
    let noise: usize = spans.iter().map(|r| r.len()).sum();
    let mut input = Vec::with_capacity(seq.len() - noise + spans.len());
    let mut target = Vec::with_capacity(noise + spans.len() + 1);
    let mut cursor = 0;
    for (k, span) in spans.iter().enumerate() {
        input.extend_from_slice(&seq[cursor..span.start]);
        input.push(sentinel(k));
        target.push(sentinel(k));
        target.extend_from_slice(&seq[span.clone()]);
        cursor = span.end;
    }
    input.extend_from_slice(&seq[cursor..]);
    target.push(sentinel(spans.len()));
    Ok((input.into(), target.into()))
}

pub fn make_span_example<R: Rng + ?Sized>(
    seq: &[TokenId],
    cfg: &SpanCorruptionConfig,
    kind: ObjectiveKind,
    tokenizer: &dyn Tokenizer,
    rng: &mut R,
) -> Result<TrainingExample, Ul2Error> {
    let (input, target) = corrupt_spans(seq, cfg, tokenizer, rng)?;
    let loss_mask = vec![true; target.len()];
    Ok(TrainingExample { input, target, loss_mask, kind })
}

/// Prefix LM: split point uniform in `[1, len - 1]`.
pub fn make_prefix_lm<R: Rng + ?Sized>(seq: &[TokenId], rng: &mut R) -> Result<TrainingExample, Ul2Error> {
    if seq.len() < 2 {
        return Err(Ul2Error::DegenerateInput { len: seq.len(), min: 2 });
    }
    let split = rng.random_range(1..seq.len());
    let target: TokenSequence = seq[split..].into();
    Ok(TrainingExample {
        input: seq[..split].into(),
        loss_mask: vec![true; target.len()],
        target,
        kind: ObjectiveKind::Prefix,
    })
}

pub fn make_causal(seq: &[TokenId]) -> Result<TrainingExample, Ul2Error> {
    if seq.is_empty() {
        return Err(Ul2Error::DegenerateInput { len: 0, min: 1 });
    }
    Ok(TrainingExample {
        input: TokenSequence::default(),
        target: seq.into(),
        loss_mask: vec![true; seq.len()],
        kind: ObjectiveKind::Causal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub max_sequence_length: usize,
    pub mixture: MixtureWeights,
    pub span_a: SpanCorruptionConfig,
    pub span_b: SpanCorruptionConfig,
    pub rng_seed: u64,
    /// Stop after this many examples (caps over-represented languages).
    pub max_examples: Option<u64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            max_sequence_length: 2048,
            mixture: MixtureWeights::default(),
            span_a: SpanCorruptionConfig::SHORT,
            span_b: SpanCorruptionConfig::LONG,
            rng_seed: 0,
            max_examples: None,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), Ul2Error> {
        if self.max_sequence_length < 2 {
            return Err(Ul2Error::InvalidConfig("max_sequence_length must be at least 2".into()));
        }
        self.mixture.validate()?;
        self.span_a.validate()?;
        self.span_b.validate()?;
        if self.span_capacity(&self.span_a) < 2 || self.span_capacity(&self.span_b) < 2 {
            return Err(Ul2Error::InvalidConfig(format!(
                "max_sequence_length {} leaves no room for span corruption",
                self.max_sequence_length
            )));
        }
        Ok(())
    }

    /// Longest chunk whose span-corrupted packed form fits the sequence budget.
    ///
    /// Packed length is `len + 2 * spans + 2`, non-decreasing in `len`.
    pub fn span_capacity(&self, cfg: &SpanCorruptionConfig) -> usize {
        let max = self.max_sequence_length;
        let mut len = max.saturating_sub(2);
        while len > 0 && len + 2 * cfg.span_count(len) + 2 > max {
            len -= 1;
        }
        len
    }

    fn capacity(&self, kind: ObjectiveKind) -> usize {
        match kind {
            ObjectiveKind::Causal => self.max_sequence_length,
            ObjectiveKind::Prefix => self.max_sequence_length - 1,
            ObjectiveKind::SpanA => self.span_capacity(&self.span_a),
            ObjectiveKind::SpanB => self.span_capacity(&self.span_b),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub documents: u64,
    pub empty_documents: u64,
    pub tokens: u64,
    pub total: u64,
    pub causal: u64,
    pub prefix: u64,
    pub span_a: u64,
    pub span_b: u64,
    /// Single-token tail chunks that fell back to the causal objective.
    pub downgraded_short_chunks: u64,
    pub capped: bool,
}

impl DatasetStats {
    fn record(&mut self, ex: &TrainingExample) {
        self.total += 1;
        match ex.kind {
            ObjectiveKind::Causal => self.causal += 1,
            ObjectiveKind::Prefix => self.prefix += 1,
            ObjectiveKind::SpanA => self.span_a += 1,
            ObjectiveKind::SpanB => self.span_b += 1,
        }
    }
}

/// Per-document output of the preprocessor.
#[derive(Debug, Clone, Default)]
pub struct DocumentExamples {
    pub examples: Vec<TrainingExample>,
    pub tokens: usize,
    pub downgraded: usize,
}

pub struct Ul2Preprocessor<'a> {
    cfg: PreprocessConfig,
    tokenizer: &'a dyn Tokenizer,
    capacities: [usize; 4],
}

const BATCH_DOCUMENTS: usize = 1024;

impl<'a> Ul2Preprocessor<'a> {
    pub fn new(cfg: PreprocessConfig, tokenizer: &'a dyn Tokenizer) -> Result<Self, Ul2Error> {
        cfg.validate()?;
        let capacities = ObjectiveKind::ALL.map(|k| cfg.capacity(k));
        Ok(Self { cfg, tokenizer, capacities })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.cfg
    }

    /// Chunks one document and draws one objective per chunk.
    ///
    /// The objective is drawn before the chunk is cut so each chunk can be
    /// sized to fit its objective's packed form. Randomness comes only from
    /// `(rng_seed, doc_index)`.
    pub fn process_document(&self, doc_index: u64, text: &str) -> Result<DocumentExamples, Ul2Error> {
        let tokens = self.tokenizer.encode(text);
        let mut rng = seeding::rng_for(self.cfg.rng_seed, doc_index);
        let mut out = DocumentExamples { tokens: tokens.len(), ..Default::default() };
        let mut pos = 0;
        while pos < tokens.len() {
            let mut kind = sample_objective(&self.cfg.mixture, &mut rng)?;
            let cap = self.capacities[usize::from(kind.tag())];
            let end = pos + cap.min(tokens.len() - pos);
            let chunk = &tokens[pos..end];
            if chunk.len() < 2 && kind != ObjectiveKind::Causal {
                kind = ObjectiveKind::Causal;
                out.downgraded += 1;
            }
            let ex = self.make_example(chunk, kind, &mut rng)?;
            out.examples.push(ex);
            pos = end;
        }
        Ok(out)
    }

    fn make_example(
        &self,
        chunk: &[TokenId],
        kind: ObjectiveKind,
        rng: &mut SeededRng,
    ) -> Result<TrainingExample, Ul2Error> {
        match kind {
            ObjectiveKind::Causal => make_causal(chunk),
            ObjectiveKind::Prefix => make_prefix_lm(chunk, rng),
            ObjectiveKind::SpanA => make_span_example(chunk, &self.cfg.span_a, kind, self.tokenizer, rng),
            ObjectiveKind::SpanB => make_span_example(chunk, &self.cfg.span_b, kind, self.tokenizer, rng),
        }
    }

    /// Streams a corpus through the preprocessor, handing examples to `sink`
    /// in document order.
    ///
    /// Documents are processed in batches on `exec`; output is identical for
    /// any worker count.
    pub fn build<I, E, S>(&self, docs: I, exec: Execution, mut sink: S) -> Result<DatasetStats, Ul2Error>
    where
        I: IntoIterator<Item = Result<String, E>>,
        E: std::fmt::Display,
        S: FnMut(&TrainingExample) -> Result<(), Ul2Error>,
    {
        let mut stats = DatasetStats::default();
        let mut batch: Vec<(u64, String)> = Vec::with_capacity(BATCH_DOCUMENTS);
        let mut iter = docs.into_iter().enumerate();
        let mut next_index = 0u64;
        loop {
            batch.clear();
            for (i, doc) in iter.by_ref() {
                let text = doc.map_err(|e| Ul2Error::Source { index: i, message: e.to_string() })?;
                stats.documents += 1;
                if text.trim().is_empty() {
                    stats.empty_documents += 1;
                    continue;
                }
                batch.push((next_index, text));
                next_index += 1;
                if batch.len() == BATCH_DOCUMENTS {
                    break;
                }
            }
            if batch.is_empty() {
                break;
            }
            let results = exec.map(&batch, |(i, text)| self.process_document(*i, text));
            for r in results {
                let doc = r?;
                stats.tokens += doc.tokens as u64;
                stats.downgraded_short_chunks += doc.downgraded as u64;
                for ex in &doc.examples {
                    if self.cfg.max_examples.is_some_and(|cap| stats.total >= cap) {
                        stats.capped = true;
                        return Ok(stats);
                    }
                    sink(ex)?;
                    stats.record(ex);
                }
            }
        }
        Ok(stats)
    }
}

/// On-disk example encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleFormat {
    /// `{"input": [..], "target": [..], "loss_mask": [..], "kind": ".."}` per line.
    Jsonl,
    /// Length-prefixed little-endian records, see [`write_binary_record`].
    Binary,
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    input: &'a TokenSequence,
    target: &'a TokenSequence,
    loss_mask: Vec<u8>,
    kind: ObjectiveKind,
}

pub fn write_jsonl_record<W: Write>(w: &mut W, ex: &TrainingExample) -> io::Result<()> {
    let rec = JsonRecord {
        input: &ex.input,
        target: &ex.target,
        loss_mask: ex.loss_mask.iter().map(|&b| u8::from(b)).collect(),
        kind: ex.kind,
    };
    serde_json::to_writer(&mut *w, &rec)?;
    w.write_all(b"\n")
}

/// Binary record layout (all little-endian):
///
/// ```text
/// u32 payload_len | u8 kind | u32 input_len | u32 target_len
///   | input_len * u64 | target_len * u64 | target_len * u8 mask
/// ```
pub fn write_binary_record<W: Write>(w: &mut W, ex: &TrainingExample) -> io::Result<()> {
    let payload = 1 + 4 + 4 + 8 * (ex.input.len() + ex.target.len()) + ex.target.len();
    let mut buf = Vec::with_capacity(4 + payload);
    buf.extend_from_slice(&(payload as u32).to_le_bytes());
    buf.push(ex.kind.tag());
    buf.extend_from_slice(&(ex.input.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(ex.target.len() as u32).to_le_bytes());
    for t in ex.input.iter().chain(ex.target.iter()) {
        buf.extend_from_slice(&t.0.to_le_bytes());
    }
    buf.extend(ex.loss_mask.iter().map(|&b| u8::from(b)));
    w.write_all(&buf)
}

/// Reads one binary record; `Ok(None)` at a clean end of stream.
pub fn read_binary_record<R: Read>(r: &mut R) -> io::Result<Option<TrainingExample>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    if buf.len() < 9 {
        return Err(bad("truncated record header"));
    }
    let kind = ObjectiveKind::from_tag(buf[0]).ok_or_else(|| bad("unknown objective tag"))?;
    let n_in = u32::from_le_bytes(buf[1..5].try_into().unwrap()) as usize;
    let n_tg = u32::from_le_bytes(buf[5..9].try_into().unwrap()) as usize;
    if buf.len() != 9 + 8 * (n_in + n_tg) + n_tg {
        return Err(bad("record length does not match its header"));
    }
    let ids: Vec<TokenId> = buf[9..9 + 8 * (n_in + n_tg)]
        .chunks_exact(8)
        .map(|c| TokenId(u64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let loss_mask = buf[9 + 8 * (n_in + n_tg)..].iter().map(|&b| b != 0).collect();
    Ok(Some(TrainingExample { input: ids[..n_in].into(), target: ids[n_in..].into(), loss_mask, kind }))
}

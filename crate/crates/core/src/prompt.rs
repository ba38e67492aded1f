//! Few-shot prompt rendering and completion parsing.
//!
//! Layout for demonstrations `(x_i, y_i)` and query `q`:
//!
//! ```text
//! {source}: x_1
//! {target}: y_1
//! ...
//! {source}: x_k
//! {target}: y_k
//!
//! {source}: q
//! {target}: <completion>
//! ```
//!
//! The prompt ends with `"{target}: "`; the model's completion stops at the
//! first newline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pool::Demonstration;
use crate::text::LanguagePair;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("at least one demonstration is required")]
    NoDemonstrations,
    #[error("demonstration {index} contains a line break in its {field}")]
    EmbeddedNewline { index: usize, field: &'static str },
    #[error("query is empty")]
    EmptyQuery,
    #[error("query contains a line break")]
    QueryNewline,
    #[error("language name `{0}` must be non-empty and free of ':' and line breaks")]
    InvalidLanguageName(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub demo_count: usize,
    pub pair: LanguagePair,
}

impl RenderedPrompt {
    /// Hex SHA-256 of the prompt text.
    pub fn hash(&self) -> String {
        prompt_hash(&self.text)
    }
}

pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn has_break(s: &str) -> bool {
    s.contains(['\n', '\r'])
}

fn check_name(name: &str) -> Result<(), PromptError> {
    if name.trim().is_empty() || name.contains(':') || has_break(name) {
        return Err(PromptError::InvalidLanguageName(name.to_string()));
    }
    Ok(())
}

/// Renders demonstrations and a query into the few-shot template.
pub fn render_prompt(demos: &[Demonstration], query: &str, pair: &LanguagePair) -> Result<RenderedPrompt, PromptError> {
    check_name(&pair.source_name)?;
    check_name(&pair.target_name)?;
    if demos.is_empty() {
        return Err(PromptError::NoDemonstrations);
    }
    for (index, d) in demos.iter().enumerate() {
        if has_break(&d.source) {
            return Err(PromptError::EmbeddedNewline { index, field: "source" });
        }
        if has_break(&d.target) {
            return Err(PromptError::EmbeddedNewline { index, field: "target" });
        }
    }
    if query.trim().is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    if has_break(query) {
        return Err(PromptError::QueryNewline);
    }

    let (src, tgt) = (&pair.source_name, &pair.target_name);
    let mut text = String::new();
    for d in demos {
        text.push_str(&format!("{src}: {}\n{tgt}: {}\n", d.source, d.target));
    }
    text.push_str(&format!("\n{src}: {query}\n{tgt}: "));
    Ok(RenderedPrompt { text, demo_count: demos.len(), pair: pair.clone() })
}

/// Labeled lines recovered from a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    /// `(label, text)` for every demonstration line, in order.
    pub demo_lines: Vec<(String, String)>,
    pub query_label: String,
    pub query: String,
    pub target_label: String,
}

fn split_label(line: &str) -> Option<(String, String)> {
    let (label, text) = line.split_once(": ")?;
    Some((label.to_string(), text.to_string()))
}

/// Inverse of [`render_prompt`] for prompts it produced.
pub fn parse_prompt(text: &str) -> Option<ParsedPrompt> {
    let (demo_block, query_block) = text.rsplit_once("\n\n")?;
    let demo_lines = demo_block.lines().map(split_label).collect::<Option<Vec<_>>>()?;
    let (query_line, terminal) = query_block.split_once('\n')?;
    let (query_label, query) = split_label(query_line)?;
    let target_label = terminal.strip_suffix(": ")?.to_string();
    Some(ParsedPrompt { demo_lines, query_label, query, target_label })
}

/// The query text of a rendered prompt (the source line before the terminal label).
pub fn extract_query(prompt: &str) -> Option<&str> {
    let (_, query_block) = prompt.rsplit_once("\n\n")?;
    let (query_line, _) = query_block.split_once('\n')?;
    Some(query_line.split_once(": ")?.1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Nothing was left after cutting at the first newline and trimming.
    pub empty: bool,
}

/// Text up to the first newline, trimmed.
pub fn parse_completion(raw: &str) -> Completion {
    let line = raw.split('\n').next().unwrap_or("");
    let text = line.trim().to_string();
    Completion { empty: text.is_empty(), text }
}

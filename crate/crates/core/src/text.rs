//! Tokenizer contract, token sequences and rolling n-gram hashes.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::mix64;

/// Index into a tokenizer vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u64);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }

    pub fn from_ids(ids: impl IntoIterator<Item = u64>) -> Self {
        Self(ids.into_iter().map(TokenId).collect())
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.0.iter().map(|t| t.0)
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v)
    }
}

impl From<&[TokenId]> for TokenSequence {
    fn from(v: &[TokenId]) -> Self {
        Self(v.to_vec())
    }
}

/// Text <-> token contract shared by preprocessing and overlap auditing.
///
/// Sentinels occupy the top `num_sentinels()` ids of the vocabulary in
/// descending order: `sentinel(0) == vocab_size() - 1`.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;

    fn encode(&self, text: &str) -> TokenSequence;

    /// Renders tokens back to text. Sentinels render as `<extra_id_k>`;
    /// invalid UTF-8 from stray byte tokens is replaced lossily.
    fn decode(&self, tokens: &[TokenId]) -> String;

    fn vocab_size(&self) -> u64;

    fn num_sentinels(&self) -> u32;

    fn sentinel(&self, k: u32) -> Option<TokenId> {
        (k < self.num_sentinels()).then(|| TokenId(self.vocab_size() - 1 - u64::from(k)))
    }

    /// Index `k` if `id` is a sentinel.
    fn sentinel_index(&self, id: TokenId) -> Option<u32> {
        let top = self.vocab_size() - 1;
        let k = top.checked_sub(id.0)?;
        (k < u64::from(self.num_sentinels())).then_some(k as u32)
    }

    /// Input/target separator for decoder-only packing: the last sentinel,
    /// kept out of the range handed to span corruption.
    fn separator(&self) -> TokenId {
        self.sentinel(self.num_sentinels() - 1).expect("tokenizer must reserve at least one sentinel")
    }
}

const BYTE_TOKENS: u64 = 256;
const PIECE_BYTES: usize = 7;
const CONTINUATION_BIT: u64 = 1 << 59;
const LEN_SHIFT: u32 = 56;
const PAYLOAD_MASK: u64 = (1 << LEN_SHIFT) - 1;
const WORDPIECE_VOCAB: u64 = 1 << 61;
const DEFAULT_SENTINELS: u32 = 4096;

/// Stateless whitespace word-piece tokenizer.
///
/// Each maximal non-whitespace run is cut into pieces of at most seven UTF-8
/// bytes (on char boundaries) and every piece is packed directly into its id,
/// so the mapping needs no vocabulary file and is identical on every platform.
/// A single ASCII space between two words is implicit; all other whitespace is
/// emitted as raw byte tokens (ids `0..256`).
///
/// Id layout: `256 + (continuation << 59 | (len - 1) << 56 | packed_bytes)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPieceTokenizer;

impl WordPieceTokenizer {
    pub fn new() -> Self {
        Self
    }

    fn piece_id(bytes: &[u8], continuation: bool) -> TokenId {
        debug_assert!(!bytes.is_empty() && bytes.len() <= PIECE_BYTES);
        let mut packed = 0u64;
        for (i, b) in bytes.iter().enumerate() {
            packed |= u64::from(*b) << (8 * i);
        }
        let len = (bytes.len() as u64 - 1) << LEN_SHIFT;
        let cont = if continuation { CONTINUATION_BIT } else { 0 };
        TokenId(BYTE_TOKENS + (cont | len | packed))
    }

    fn unpack(id: TokenId) -> Option<(bool, Vec<u8>)> {
        let raw = id.0.checked_sub(BYTE_TOKENS)?;
        if raw >= 2 * CONTINUATION_BIT {
            return None;
        }
        let cont = raw & CONTINUATION_BIT != 0;
        let len = ((raw >> LEN_SHIFT) & 0b111) as usize + 1;
        let payload = raw & PAYLOAD_MASK;
        let bytes = (0..len).map(|i| (payload >> (8 * i)) as u8).collect();
        Some((cont, bytes))
    }

    fn push_word(out: &mut Vec<TokenId>, word: &str) {
        let mut start = 0;
        let mut first = true;
        while start < word.len() {
            let mut end = (start + PIECE_BYTES).min(word.len());
            while !word.is_char_boundary(end) {
                end -= 1;
            }
            out.push(Self::piece_id(&word.as_bytes()[start..end], !first));
            first = false;
            start = end;
        }
    }
}

impl Tokenizer for WordPieceTokenizer {
    fn name(&self) -> &str {
        "wordpiece"
    }

    fn encode(&self, text: &str) -> TokenSequence {
        let mut out = Vec::with_capacity(text.len() / 4 + 1);
        let mut rest = text;
        let mut prev_word = false;
        while !rest.is_empty() {
            let ws_len = rest.char_indices().find(|(_, c)| !c.is_whitespace()).map_or(rest.len(), |(i, _)| i);
            if ws_len > 0 {
                let ws = &rest[..ws_len];
                let next_is_word = ws_len < rest.len();
                if !(ws == " " && prev_word && next_is_word) {
                    out.extend(ws.bytes().map(|b| TokenId(u64::from(b))));
                    prev_word = false;
                }
                rest = &rest[ws_len..];
                continue;
            }
            let word_len = rest.char_indices().find(|(_, c)| c.is_whitespace()).map_or(rest.len(), |(i, _)| i);
            Self::push_word(&mut out, &rest[..word_len]);
            prev_word = true;
            rest = &rest[word_len..];
        }
        TokenSequence(out)
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        let mut bytes = Vec::new();
        let mut prev_word = false;
        for &t in tokens {
            if let Some(k) = self.sentinel_index(t) {
                bytes.extend_from_slice(format!("<extra_id_{k}>").as_bytes());
                prev_word = false;
            } else if t.0 < BYTE_TOKENS {
                bytes.push(t.0 as u8);
                prev_word = false;
            } else if let Some((cont, piece)) = Self::unpack(t) {
                if !cont && prev_word {
                    bytes.push(b' ');
                }
                bytes.extend_from_slice(&piece);
                prev_word = true;
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    fn vocab_size(&self) -> u64 {
        WORDPIECE_VOCAB
    }

    fn num_sentinels(&self) -> u32 {
        DEFAULT_SENTINELS
    }
}

/// One token per Unicode scalar value; used for character-level auditing.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharTokenizer;

const CHAR_SPACE: u64 = 0x11_0000;

impl Tokenizer for CharTokenizer {
    fn name(&self) -> &str {
        "char"
    }

    fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence(text.chars().map(|c| TokenId(u64::from(u32::from(c)))).collect())
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        let mut s = String::new();
        for &t in tokens {
            if let Some(k) = self.sentinel_index(t) {
                s.push_str(&format!("<extra_id_{k}>"));
            } else {
                s.push(u32::try_from(t.0).ok().and_then(char::from_u32).unwrap_or('\u{FFFD}'));
            }
        }
        s
    }

    fn vocab_size(&self) -> u64 {
        CHAR_SPACE + u64::from(DEFAULT_SENTINELS)
    }

    fn num_sentinels(&self) -> u32 {
        DEFAULT_SENTINELS
    }
}

#[derive(Debug, Error)]
#[error("unknown tokenizer `{0}` (expected `wordpiece` or `char`)")]
pub struct UnknownTokenizer(pub String);

/// Looks up a built-in tokenizer by name.
pub fn tokenizer_by_name(name: &str) -> Result<Box<dyn Tokenizer>, UnknownTokenizer> {
    match name {
        "wordpiece" | "builtin" => Ok(Box::new(WordPieceTokenizer)),
        "char" => Ok(Box::new(CharTokenizer)),
        other => Err(UnknownTokenizer(other.to_string())),
    }
}

/// Source/target language names, used verbatim as prompt labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguagePair {
    pub source_name: String,
    pub target_name: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("language names must be non-empty single-line strings")]
pub struct InvalidLanguagePair;

impl LanguagePair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Result<Self, InvalidLanguagePair> {
        let pair = Self { source_name: source.into(), target_name: target.into() };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<(), InvalidLanguagePair> {
        let ok = |s: &str| !s.trim().is_empty() && !s.contains('\n');
        if ok(&self.source_name) && ok(&self.target_name) {
            Ok(())
        } else {
            Err(InvalidLanguagePair)
        }
    }
}

const HASH_BASE: u64 = 0x9E37_79B9_7F4A_7C15 | 1;

#[inline]
fn token_mix(t: TokenId) -> u64 {
    mix64(t.0)
}

/// Polynomial hash of one window: `sum(mix(t_i) * B^(n-1-i))` mod 2^64.
pub fn window_hash(window: &[TokenId]) -> u64 {
    window.iter().fold(0u64, |h, &t| h.wrapping_mul(HASH_BASE).wrapping_add(token_mix(t)))
}

/// Rolling hashes of every contiguous `n`-token window, in order.
///
/// Returns `len - n + 1` hashes, or none when the sequence is shorter than `n`.
pub fn ngram_hashes(seq: &[TokenId], n: usize) -> Vec<u64> {
    assert!(n >= 1, "n-gram size must be at least 1");
    if seq.len() < n {
        return Vec::new();
    }
    let lead = (1..n).fold(1u64, |p, _| p.wrapping_mul(HASH_BASE));
    let mut out = Vec::with_capacity(seq.len() - n + 1);
    let mut h = window_hash(&seq[..n]);
    out.push(h);
    for i in n..seq.len() {
        h = h
            .wrapping_sub(token_mix(seq[i - n]).wrapping_mul(lead))
            .wrapping_mul(HASH_BASE)
            .wrapping_add(token_mix(seq[i]));
        out.push(h);
    }
    out
}

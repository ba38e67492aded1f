//! Few-shot machine translation toolkit.
//!
//! The crate covers the data and inference machinery around a decoder-only
//! translation model that is prompted with a handful of demonstrations:
//!
//! * [`text`]: tokenizer contract, a hermetic built-in tokenizer and rolling n-gram hashes.
//! * [`ul2`]: mixture-of-denoisers training example generation (span corruption,
//!   prefix LM, causal LM).
//! * [`overlap`]: target-side train/test contamination auditing with n-gram matching.
//! * [`pool`]: demonstration pools, CDS quality buckets and style-tag selection.
//! * [`prompt`]: few-shot prompt rendering and completion parsing.
//! * [`backend`]: candidate generation (deterministic mock and HTTP client).
//! * [`mbr`]: minimum Bayes risk selection over sampled candidates.
//! * [`metrics`]: surrogate quality metrics, remote learned metrics and
//!   controllability metrics (lexical accuracy, FRMT score, formality accuracy).
//! * [`pipeline`]: end-to-end runs and experiment drivers.
//!
//! Data-parallel loops go through [`exec::Execution`]; building without the
//! default `parallel` feature turns every loop sequential.

pub mod backend;
pub mod exec;
pub mod http;
pub mod mbr;
pub mod metrics;
pub mod overlap;
pub mod pipeline;
pub mod pool;
pub mod prompt;
pub mod seeding;
pub mod text;
pub mod ul2;

pub use backend::{Backend, CandidateSet, GenerationParams};
pub use exec::Execution;
pub use mbr::{mbr_select, MbrResult, UtilityMatrix};
pub use metrics::Metric;
pub use pool::{DemoPool, Demonstration};
pub use text::{LanguagePair, TokenId, TokenSequence, Tokenizer};

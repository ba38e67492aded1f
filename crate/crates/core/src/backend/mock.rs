use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{apply_stop, Backend, BackendError, CandidateSet, DecodingMode, GenerationParams};
use crate::prompt::{extract_query, prompt_hash};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedOutput {
    pub text: String,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Outputs for one query, optionally conditioned on a substring of the prompt
/// (e.g. a marker that only appears in certain demonstrations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when_contains: Option<String>,
    pub outputs: Vec<WeightedOutput>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockFallback {
    #[default]
    None,
    /// Return the query text itself.
    Echo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockTable {
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub fallback: MockFallback,
}

impl MockTable {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text =
            fs::read_to_string(path).map_err(|e| BackendError::InvalidParams(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::InvalidParams(format!("{}: {e}", path.display())))
    }
}

/// Deterministic lookup-table backend for hermetic runs.
///
/// The query line of the prompt selects the first matching rule; candidates
/// are categorical draws over the rule's outputs with probabilities
/// proportional to `weight^(1/temperature)`. The generator is seeded from
/// `(seed, prompt)`, so identical calls return identical candidate lists.
#[derive(Debug, Clone)]
pub struct MockBackend {
    table: MockTable,
    by_query: HashMap<String, Vec<usize>>,
}

impl MockBackend {
    pub fn new(table: MockTable) -> Result<Self, BackendError> {
        let mut by_query: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, rule) in table.rules.iter().enumerate() {
            if rule.outputs.is_empty() {
                return Err(BackendError::InvalidParams(format!("rule for `{}` has no outputs", rule.query)));
            }
            if rule.outputs.iter().any(|o| !(o.weight > 0.0 && o.weight.is_finite())) {
                return Err(BackendError::InvalidParams(format!(
                    "rule for `{}` has a non-positive weight",
                    rule.query
                )));
            }
            by_query.entry(rule.query.clone()).or_default().push(i);
        }
        Ok(Self { table, by_query })
    }

    pub fn table(&self) -> &MockTable {
        &self.table
    }

    fn rule_for(&self, prompt: &str, query: &str) -> Option<&MockRule> {
        self.by_query
            .get(query)?
            .iter()
            .map(|&i| &self.table.rules[i])
            .find(|r| r.when_contains.as_deref().is_none_or(|m| prompt.contains(m)))
    }
}

fn truncate_words(text: &str, max_words: usize) -> &str {
    let mut seen = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                seen += 1;
                if seen == max_words {
                    return &text[..i];
                }
            }
            in_word = false;
        } else {
            in_word = true;
        }
    }
    text
}

fn stable_hash(s: &str) -> u64 {
    // FNV-1a; stable across platforms and releases
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

impl Backend for MockBackend {
    fn identity(&self) -> String {
        format!("mock({} rules)", self.table.rules.len())
    }

    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }

    fn generate(&self, prompt: &str, params: &GenerationParams, seed: u64) -> Result<CandidateSet, BackendError> {
        params.validate()?;
        let query = extract_query(prompt).unwrap_or(prompt);
        let finish =
            |t: &str| truncate_words(&apply_stop(t, &params.stop_sequences), params.max_new_tokens).to_string();
        let count = params.expected_candidates();
        let prompt_id = prompt_hash(prompt);

        let Some(rule) = self.rule_for(prompt, query) else {
            return match self.table.fallback {
                MockFallback::Echo => Ok(CandidateSet { prompt_id, candidates: vec![finish(query); count] }),
                MockFallback::None => Err(BackendError::UnknownQuery(query.to_string())),
            };
        };

        let candidates = match params.mode {
            DecodingMode::Beam { .. } => {
                let best =
                    rule.outputs
                        .iter()
                        .enumerate()
                        .fold(0, |b, (i, o)| if o.weight > rule.outputs[b].weight { i } else { b });
                vec![finish(&rule.outputs[best].text)]
            }
            DecodingMode::Sample => {
                let inv_t = 1.0 / params.temperature;
                let weights: Vec<f64> = rule.outputs.iter().map(|o| o.weight.powf(inv_t)).collect();
                let total: f64 = weights.iter().sum();
                let mut rng = seeding::rng_for(seed, stable_hash(prompt));
                (0..count)
                    .map(|_| {
                        let u = rng.random::<f64>() * total;
                        let mut acc = 0.0;
                        let mut pick = weights.len() - 1;
                        for (i, w) in weights.iter().enumerate() {
                            acc += w;
                            if u < acc {
                                pick = i;
                                break;
                            }
                        }
                        finish(&rule.outputs[pick].text)
                    })
                    .collect()
            }
        };
        Ok(CandidateSet { prompt_id, candidates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::Demonstration;
    use crate::prompt::render_prompt;
    use crate::text::LanguagePair;

    fn prompt(query: &str, demo_target: &str) -> String {
        let pair = LanguagePair::new("German", "English").unwrap();
        render_prompt(&[Demonstration::new("Hallo", demo_target)], query, &pair).unwrap().text
    }

    fn danke() -> MockBackend {
        MockBackend::new(MockTable {
            rules: vec![MockRule {
                query: "Danke".into(),
                when_contains: None,
                outputs: vec![
                    WeightedOutput { text: "Thanks".into(), weight: 3.0 },
                    WeightedOutput { text: "Thank you\nGerman: more".into(), weight: 1.0 },
                ],
            }],
            fallback: MockFallback::None,
        })
        .unwrap()
    }

    #[test]
    fn sample_count_and_determinism() {
        let b = danke();
        let p = prompt("Danke", "Hello");
        let one = b.generate(&p, &GenerationParams { num_samples: 1, ..Default::default() }, 0).unwrap();
        assert_eq!(one.candidates.len(), 1);
        let a = b.generate(&p, &GenerationParams::default(), 7).unwrap();
        let a2 = b.generate(&p, &GenerationParams::default(), 7).unwrap();
        assert_eq!(a, a2);
        assert_eq!(a.candidates.len(), 64);
        assert!(a.candidates.iter().all(|c| c == "Thanks" || c == "Thank you"));
    }

    #[test]
    fn beam_returns_the_heaviest_output() {
        let b = danke();
        let set = b.generate(&prompt("Danke", "Hello"), &GenerationParams::beam(), 0).unwrap();
        assert_eq!(set.candidates, vec!["Thanks".to_string()]);
    }

    #[test]
    fn unknown_queries() {
        let b = danke();
        assert!(matches!(
            b.generate(&prompt("Bitte", "Hello"), &GenerationParams::default(), 0),
            Err(BackendError::UnknownQuery(q)) if q == "Bitte"
        ));
        let echo = MockBackend::new(MockTable { rules: vec![], fallback: MockFallback::Echo }).unwrap();
        let set = echo
            .generate(&prompt("Bitte", "Hello"), &GenerationParams { num_samples: 3, ..Default::default() }, 0)
            .unwrap();
        assert_eq!(set.candidates, vec!["Bitte"; 3]);
    }

    #[test]
    fn conditional_rules_follow_prompt_markers() {
        let b = MockBackend::new(MockTable {
            rules: vec![
                MockRule {
                    query: "q".into(),
                    when_contains: Some("[formal]".into()),
                    outputs: vec![WeightedOutput { text: "Sie".into(), weight: 1.0 }],
                },
                MockRule {
                    query: "q".into(),
                    when_contains: None,
                    outputs: vec![WeightedOutput { text: "du".into(), weight: 1.0 }],
                },
            ],
            fallback: MockFallback::None,
        })
        .unwrap();
        let params = GenerationParams { num_samples: 2, ..Default::default() };
        assert_eq!(b.generate(&prompt("q", "Hi [formal]"), &params, 0).unwrap().candidates, vec!["Sie"; 2]);
        assert_eq!(b.generate(&prompt("q", "Hi"), &params, 0).unwrap().candidates, vec!["du"; 2]);
    }

    #[test]
    fn word_truncation() {
        assert_eq!(truncate_words("a b c d", 2), "a b");
        assert_eq!(truncate_words("a b", 5), "a b");
    }

    #[test]
    fn rejects_bad_tables() {
        let t = MockTable {
            rules: vec![MockRule { query: "x".into(), when_contains: None, outputs: vec![] }],
            fallback: MockFallback::None,
        };
        assert!(MockBackend::new(t).is_err());
    }
}

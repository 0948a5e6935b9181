//! Scripted stand-ins for an extraction policy.
//!
//! An agent's extraction is the gold extraction subsampled at its fidelity
//! plus spurious items at its noise rate. Successive attempts on the same
//! document accumulate, so retries raise recall.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SyntheticDocument;
use crate::extraction::{ExtractionResult, RelationMention};
use crate::tools::ToolName;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Extract {
        extraction: ExtractionResult,
        format_ok: bool,
    },
    CallTool {
        tool: ToolName,
    },
    Finish,
}

/// What the driver exposes to the agent before each step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub doc: &'a SyntheticDocument,
    pub step: usize,
    /// Accepted extraction attempts so far.
    pub attempts: u32,
    pub working: Option<&'a ExtractionResult>,
    pub density_pending: bool,
    /// Last density verdict on the working extraction.
    pub needs_more: Option<bool>,
    pub disambiguated: bool,
    pub stored: bool,
}

/// A deterministic policy: same observation, same action.
pub trait Policy {
    fn name(&self) -> &str;
    fn act(&self, obs: &Observation<'_>) -> Action;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Follows the tool-ordering protocol.
    #[default]
    Compliant,
    /// Only calls tools and finishes; never extracts.
    NeverExtract,
    /// Stores right after the density check.
    SkipDisambiguation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentScript {
    pub name: String,
    /// Probability that each gold item is reproduced in an attempt.
    pub fidelity: f64,
    /// Expected spurious items per gold item and attempt.
    pub noise: f64,
    pub seed: u64,
    /// Extraction attempts before storing regardless of the density verdict.
    pub max_attempts: u32,
    #[serde(default)]
    pub behavior: Behavior,
}

impl AgentScript {
    pub fn new(name: &str, fidelity: f64, noise: f64, seed: u64) -> Self {
        Self {
            name: name.into(),
            fidelity: fidelity.clamp(0.0, 1.0),
            noise: noise.clamp(0.0, 1.0),
            seed,
            max_attempts: 3,
            behavior: Behavior::Compliant,
        }
    }

    pub fn with_behavior(mut self, b: Behavior) -> Self {
        self.behavior = b;
        self
    }

    fn rng(&self, doc_id: &str, attempt: u32) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(doc_id.as_bytes());
        h.update(attempt.to_le_bytes());
        let d = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&d);
        ChaCha8Rng::from_seed(seed)
    }

    /// Cumulative extraction after attempts `0..=attempt`.
    pub fn extraction(&self, doc: &SyntheticDocument, attempt: u32) -> ExtractionResult {
        let mut out = ExtractionResult::default();
        for a in 0..=attempt {
            self.sample_into(doc, a, &mut out);
        }
        out
    }

    fn sample_into(&self, doc: &SyntheticDocument, attempt: u32, out: &mut ExtractionResult) {
        let mut rng = self.rng(&doc.doc_id, attempt);
        let has =
            |out: &ExtractionResult, t: &str, n: &str| out.entities.get(t).is_some_and(|v| v.iter().any(|x| x == n));
        let gold_types: Vec<(String, String)> =
            doc.gold.entity_items().into_iter().map(|e| (e.etype, e.name)).collect();
        let type_of = |n: &str| gold_types.iter().find(|(_, m)| m == n).map(|(t, _)| t.clone());

        for (t, n) in &gold_types {
            if rng.random_bool(self.fidelity) && !has(out, t, n) {
                out.add_entity(t, n);
            }
        }
        for r in doc.gold.relation_items() {
            if !rng.random_bool(self.fidelity) {
                continue;
            }
            let dup = out
                .relations
                .get(&r.rel_type)
                .is_some_and(|ms| ms.iter().any(|m| m.subject == r.subject && m.object == r.object));
            if dup {
                continue;
            }
            for end in [&r.subject, &r.object] {
                if let Some(t) = type_of(end) {
                    if !has(out, &t, end) {
                        out.add_entity(&t, end);
                    }
                }
            }
            let c = rng.random_range(GOLD_CONFIDENCE);
            out.add_relation(
                &r.rel_type,
                RelationMention::new(r.subject.clone(), r.object.clone()).with_confidence(c),
            );
        }

        // spurious items are built around generated names: a new entity, or
        // a relation from a new entity to one already extracted
        let gold_n = doc.gold.item_count();
        let spurious = (0..gold_n).filter(|_| rng.random_bool(self.noise)).count();
        for _ in 0..spurious {
            let names: Vec<String> = out.entities.values().flatten().cloned().collect();
            let t = doc
                .schema
                .entity_types
                .choose(&mut rng)
                .expect("schema has entity types")
                .clone();
            let n = noise_name(&mut rng, &doc.text, &names);
            out.add_entity(&t, &n);
            if rng.random_bool(0.5) {
                if let Some(other) = names.choose(&mut rng) {
                    let rel = doc
                        .schema
                        .relation_types
                        .choose(&mut rng)
                        .expect("schema has relation types")
                        .clone();
                    let c = rng.random_range(NOISE_CONFIDENCE);
                    let (s, o) = if rng.random_bool(0.5) {
                        (n, other.clone())
                    } else {
                        (other.clone(), n)
                    };
                    out.add_relation(&rel, RelationMention::new(s, o).with_confidence(c));
                }
            }
        }
    }
}

/// Confidence ranges of reproduced gold relations and of spurious ones;
/// they overlap so confidence alone does not separate the two.
const GOLD_CONFIDENCE: std::ops::RangeInclusive<f64> = 0.6..=1.0;
const NOISE_CONFIDENCE: std::ops::RangeInclusive<f64> = 0.3..=0.9;

const NOISE_SYLLABLES: [&str; 8] = ["qu", "xo", "zy", "vek", "jun", "pra", "ox", "ily"];

fn noise_name(rng: &mut ChaCha8Rng, text: &str, taken: &[String]) -> String {
    let taken: BTreeSet<&str> = taken.iter().map(String::as_str).collect();
    loop {
        let w: String = (0..3)
            .map(|_| *NOISE_SYLLABLES.choose(rng).expect("non-empty"))
            .collect();
        let mut c = w.chars();
        let n: String = c
            .next()
            .map(|f| f.to_uppercase().chain(c).collect())
            .unwrap_or_default();
        if !text.contains(&n) && !taken.contains(n.as_str()) {
            return n;
        }
    }
}

impl Policy for AgentScript {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&self, obs: &Observation<'_>) -> Action {
        if obs.stored {
            return Action::Finish;
        }
        let extract = |attempt: u32| Action::Extract {
            extraction: self.extraction(obs.doc, attempt),
            format_ok: true,
        };
        match self.behavior {
            Behavior::NeverExtract => {
                if obs.step == 0 {
                    Action::CallTool {
                        tool: ToolName::ExtractionDensity,
                    }
                } else {
                    Action::Finish
                }
            }
            Behavior::SkipDisambiguation => match (obs.working, obs.density_pending) {
                (None, _) => extract(0),
                (Some(_), true) => Action::CallTool {
                    tool: ToolName::ExtractionDensity,
                },
                (Some(_), false) => Action::CallTool {
                    tool: ToolName::KgStorage,
                },
            },
            Behavior::Compliant => {
                if obs.working.is_none() {
                    return extract(0);
                }
                if obs.density_pending {
                    return Action::CallTool {
                        tool: ToolName::ExtractionDensity,
                    };
                }
                if obs.needs_more == Some(true) && obs.attempts < self.max_attempts {
                    return extract(obs.attempts);
                }
                if !obs.disambiguated {
                    return Action::CallTool {
                        tool: ToolName::EntityDisambiguation,
                    };
                }
                Action::CallTool {
                    tool: ToolName::KgStorage,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{default_schema, generate_corpus};

    #[test]
    fn perfect_agent_reproduces_gold() {
        let docs = generate_corpus(3, 4, &default_schema()).unwrap();
        let a = AgentScript::new("perfect", 1.0, 0.0, 9);
        for d in &docs {
            assert!(a.extraction(d, 0).same_items(&d.gold));
        }
    }

    #[test]
    fn attempts_accumulate() {
        let docs = generate_corpus(3, 4, &default_schema()).unwrap();
        let a = AgentScript::new("half", 0.5, 0.2, 9);
        for d in &docs {
            let first = a.extraction(d, 0);
            let second = a.extraction(d, 1);
            for it in first.items() {
                assert!(second.items().contains(&it));
            }
            assert_eq!(first, a.extraction(d, 0));
        }
    }

    #[test]
    fn noise_names_are_not_in_text() {
        let docs = generate_corpus(5, 3, &default_schema()).unwrap();
        let a = AgentScript::new("noisy", 0.0, 1.0, 1);
        for d in &docs {
            let x = a.extraction(d, 0);
            for e in x.entity_items() {
                assert!(!d.text.contains(&e.name));
            }
        }
    }
}

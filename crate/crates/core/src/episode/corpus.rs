//! Seeded synthetic documents with known gold extractions.
//!
//! Every document mentions each gold entity verbatim, states each gold
//! relation in a templated sentence, and is padded with neutral filler
//! sentences until the gold extraction has an adequate density.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EpisodeError;
use crate::extraction::{ExtractionResult, RelationMention, Schema};
use crate::tools::{query_extraction_density, AssessmentLevel, DensityRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDocument {
    pub doc_id: String,
    pub text: String,
    pub gold: ExtractionResult,
    pub schema: Schema,
}

pub fn default_schema() -> Schema {
    Schema::new(
        ["Person", "Organization", "City", "Product"],
        ["works_for", "located_in", "produces", "founded"],
    )
}

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ren", "ta", "vi", "sor", "ne", "da", "mur", "bel", "fi", "go", "la", "ri", "zen", "tor", "wa",
    "pel", "sun",
];

const FILLER: [&str; 12] = [
    "the report was reviewed again later that season.",
    "several meetings took place over the following weeks.",
    "observers described the period as calm and productive.",
    "most of the details were settled without much debate.",
    "the plans changed slightly as new information arrived.",
    "local newspapers covered the story in some depth.",
    "nobody expected the process to take quite so long.",
    "the outcome was summarized in a short internal memo.",
    "a number of smaller questions remained open for a while.",
    "the discussion continued informally over several lunches.",
    "progress was steady even though resources were limited.",
    "the same topic came up again at the end of the year.",
];

/// Filler sentences appended at most, per document.
const MAX_FILLER: usize = 400;

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let w: String = (0..syllables)
        .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
        .collect();
    capitalize(&w)
}

/// A capitalized one- or two-word name that does not overlap any name in
/// `taken` (neither contains the other).
fn fresh_name(rng: &mut ChaCha8Rng, taken: &BTreeSet<String>) -> String {
    loop {
        let n = if rng.random_bool(0.5) {
            format!("{} {}", word(rng, 2), word(rng, 2))
        } else {
            word(rng, 3)
        };
        let clash = taken.iter().any(|t| t.contains(&n) || n.contains(t.as_str()));
        if !clash {
            return n;
        }
    }
}

fn relation_sentence(subject: &str, rel_type: &str, object: &str) -> String {
    format!("{subject} {} {object}.", rel_type.replace('_', " "))
}

fn gold_is_adequate(text: &str, schema: &Schema, gold: &ExtractionResult) -> Option<bool> {
    let req = DensityRequest {
        text: text.to_string(),
        schema: schema.clone(),
        extracted_kg: gold.clone(),
        domain: None,
    };
    let r = query_extraction_density(&req).ok()?;
    Some(!r.needs_more_extraction && r.density_assessment.assessment_level != AssessmentLevel::OverExtraction)
}

fn generate_document(rng: &mut ChaCha8Rng, doc_id: String, schema: &Schema) -> SyntheticDocument {
    let mut types = schema.entity_types.clone();
    types.shuffle(rng);
    let n_entities = rng.random_range(4..=7);
    let mut names = BTreeSet::new();
    let mut entities: Vec<(String, String)> = Vec::new();
    for i in 0..n_entities {
        // the first two entities take distinct types
        let t = if i < 2 {
            types[i].clone()
        } else {
            types.choose(rng).expect("non-empty").clone()
        };
        let n = fresh_name(rng, &names);
        names.insert(n.clone());
        entities.push((t, n));
    }
    let mut gold = ExtractionResult::default();
    for (t, n) in &entities {
        gold.add_entity(t, n);
    }
    let n_relations = rng.random_range(2..=5);
    let mut pairs = BTreeSet::new();
    let mut sentences = Vec::new();
    while pairs.len() < n_relations {
        let a = rng.random_range(0..entities.len());
        let b = rng.random_range(0..entities.len());
        if a == b || !pairs.insert((a, b)) {
            continue;
        }
        let rel = schema.relation_types.choose(rng).expect("non-empty").clone();
        gold.add_relation(&rel, RelationMention::new(entities[a].1.clone(), entities[b].1.clone()));
        sentences.push(relation_sentence(&entities[a].1, &rel, &entities[b].1));
    }
    for (t, n) in &entities {
        sentences.push(format!("{n} is a {}.", t.to_lowercase()));
    }
    sentences.shuffle(rng);

    let mut text = sentences.join(" ");
    for _ in 0..MAX_FILLER {
        if gold_is_adequate(&text, schema, &gold) == Some(true) {
            break;
        }
        let f = FILLER.choose(rng).expect("non-empty");
        text.push(' ');
        text.push_str(&capitalize(f));
    }
    SyntheticDocument {
        doc_id,
        text,
        gold,
        schema: schema.clone(),
    }
}

/// `n_docs` documents, identical for identical seeds and schemas.
pub fn generate_corpus(seed: u64, n_docs: usize, schema: &Schema) -> Result<Vec<SyntheticDocument>, EpisodeError> {
    if n_docs == 0 {
        return Err(EpisodeError::InvalidConfig("n_docs must be at least 1".into()));
    }
    if schema.entity_types.len() < 2 {
        return Err(EpisodeError::InvalidConfig(
            "schema needs at least two entity types".into(),
        ));
    }
    if schema.relation_types.is_empty() {
        return Err(EpisodeError::InvalidConfig(
            "schema needs at least one relation type".into(),
        ));
    }
    schema
        .validate()
        .map_err(|e| EpisodeError::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_docs)
        .map(|i| generate_document(&mut rng, format!("doc-{seed}-{i:04}"), schema))
        .collect())
}

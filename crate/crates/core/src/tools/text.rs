//! Text statistics and the expected-density model shared by several tools.

use serde::{Deserialize, Serialize};

use crate::extraction::Schema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    pub token_count: usize,
    pub sentence_count: usize,
    pub word_count: usize,
    pub character_count: usize,
}

/// Whitespace tokens; words are tokens holding at least one alphanumeric
/// character; sentences are non-empty runs between `.`, `?` and `!`.
pub fn text_stats(text: &str) -> TextStats {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let sentence_count = text
        .split(['.', '?', '!'])
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .count();
    TextStats {
        token_count: tokens.len(),
        sentence_count,
        word_count: tokens.iter().filter(|t| t.chars().any(char::is_alphanumeric)).count(),
        character_count: text.chars().count(),
    }
}

fn strip(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Tokens that look like terminology: ten or more letters, digits mixed
/// with letters, inner hyphens, or all-caps acronyms.
pub fn is_technical(token: &str) -> bool {
    let t = strip(token);
    let letters = t.chars().filter(|c| c.is_alphabetic()).count();
    if letters == 0 {
        return false;
    }
    let has_digit = t.chars().any(|c| c.is_ascii_digit());
    let acronym = letters >= 2 && t.chars().filter(|c| c.is_alphabetic()).all(char::is_uppercase);
    t.chars().count() >= 10 || has_digit || t.contains('-') || acronym
}

/// Capitalized tokens, a proxy for named mentions.
pub fn entity_mentions(text: &str) -> usize {
    text.split_whitespace()
        .filter(|t| strip(t).chars().next().is_some_and(char::is_uppercase))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityFeatures {
    pub entity_mentions: usize,
    pub avg_sentence_length: f64,
    pub technical_terms: usize,
    pub schema_entity_types: usize,
    pub schema_relation_types: usize,
    pub complexity_score: f64,
}

/// Blend of terminology ratio (0.4), sentence length against 25 words
/// (0.3) and schema size against 30 types (0.3), clamped to [0, 1].
pub fn complexity(text: &str, schema: &Schema) -> ComplexityFeatures {
    let stats = text_stats(text);
    let technical_terms = text.split_whitespace().filter(|t| is_technical(t)).count();
    let avg_sentence_length = stats.word_count as f64 / stats.sentence_count.max(1) as f64;
    let tech_ratio = technical_terms as f64 / stats.word_count.max(1) as f64;
    let score = 0.4 * tech_ratio
        + 0.3 * (avg_sentence_length / 25.0).min(1.0)
        + 0.3 * (schema.total_types() as f64 / 30.0).min(1.0);
    ComplexityFeatures {
        entity_mentions: entity_mentions(text),
        avg_sentence_length,
        technical_terms,
        schema_entity_types: schema.entity_types.len(),
        schema_relation_types: schema.relation_types.len(),
        complexity_score: score.clamp(0.0, 1.0),
    }
}

pub const ENTITY_BASE_PER_1K: f64 = 8.0;
pub const RELATION_BASE_PER_1K: f64 = 5.0;
pub const MIN_FACTOR: f64 = 0.5;
pub const MAX_FACTOR: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedDensity {
    pub expected_entities_per_1k: f64,
    pub expected_relations_per_1k: f64,
    pub min_entities_per_1k: f64,
    pub min_relations_per_1k: f64,
    pub max_entities_per_1k: f64,
    pub max_relations_per_1k: f64,
    pub schema_complexity: usize,
    pub entity_complexity_factor: f64,
    pub relation_complexity_factor: f64,
}

/// `base * (1 + 0.25 ln(1 + types)) * (0.5 + complexity)` per 1k tokens,
/// with the acceptable band at 0.5x to 2.5x of that.
pub fn expected_density(schema: &Schema, complexity_score: f64) -> ExpectedDensity {
    let factor = |types: usize| (1.0 + 0.25 * (1.0 + types as f64).ln()) * (0.5 + complexity_score);
    let ef = factor(schema.entity_types.len());
    let rf = factor(schema.relation_types.len());
    let e = ENTITY_BASE_PER_1K * ef;
    let r = RELATION_BASE_PER_1K * rf;
    ExpectedDensity {
        expected_entities_per_1k: e,
        expected_relations_per_1k: r,
        min_entities_per_1k: MIN_FACTOR * e,
        min_relations_per_1k: MIN_FACTOR * r,
        max_entities_per_1k: MAX_FACTOR * e,
        max_relations_per_1k: MAX_FACTOR * r,
        schema_complexity: schema.total_types(),
        entity_complexity_factor: ef,
        relation_complexity_factor: rf,
    }
}

/// `count * 1000 / tokens`, zero for an empty text.
pub fn per_1k(count: usize, tokens: usize) -> f64 {
    if tokens == 0 {
        0.0
    } else {
        count as f64 * 1000.0 / tokens as f64
    }
}

/// Character trigram Jaccard similarity of two names (case-insensitive).
pub fn trigram_jaccard(a: &str, b: &str) -> f64 {
    use std::collections::BTreeSet;
    let ta: BTreeSet<String> = crate::retrieval::char_trigrams(a).into_iter().collect();
    let tb: BTreeSet<String> = crate::retrieval::char_trigrams(b).into_iter().collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

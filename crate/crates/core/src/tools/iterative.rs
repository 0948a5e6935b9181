//! Progress tracking across extraction rounds and the stop decision.
//!
//! Each round is scored with the quality tool; improvements are relative
//! changes of the overall score, in percent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::quality::{evaluate, quality_score};
use super::ToolError;
use crate::extraction::{ExtractionResult, Schema};

pub const DEFAULT_MAX_ITERATIONS: u32 = 5;
/// Recent improvement (percent) at or below which progress counts as minimal.
pub const MINIMAL_IMPROVEMENT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterativeRequest {
    pub extraction_history: Vec<ExtractionResult>,
    pub extracted_kg: ExtractionResult,
    pub text: String,
    pub schema: Schema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_history: Option<Vec<serde_json::Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Improving,
    Stagnant,
    Declining,
}

impl Trend {
    pub fn of(recent: f64) -> Self {
        if recent > MINIMAL_IMPROVEMENT {
            Self::Improving
        } else if recent < -MINIMAL_IMPROVEMENT {
            Self::Declining
        } else {
            Self::Stagnant
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effectiveness {
    High,
    Medium,
    Low,
    Stagnant,
    InsufficientData,
}

impl Effectiveness {
    /// Band of the mean improvement; `None` when there is no improvement yet.
    pub fn of(average: Option<f64>) -> Self {
        match average {
            None => Self::InsufficientData,
            Some(a) if a > 10.0 => Self::High,
            Some(a) if a >= 5.0 => Self::Medium,
            Some(a) if a > 0.0 => Self::Low,
            Some(_) => Self::Stagnant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationFocus {
    CoverageExpansion,
    QualityImprovement,
    Refinement,
}

impl IterationFocus {
    /// By thirds of the iteration budget.
    pub fn of(current: u32, max: u32) -> Self {
        if current * 3 <= max {
            Self::CoverageExpansion
        } else if current * 3 <= 2 * max {
            Self::QualityImprovement
        } else {
            Self::Refinement
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyType {
    QualityFocus,
    CoverageExpansion,
    BalancedImprovement,
    PatternSpecific,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyPlan {
    #[serde(rename = "type")]
    pub kind: StrategyType,
    pub description: String,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressAnalysis {
    pub trend: Trend,
    pub recent_improvement: f64,
    pub overall_quality_change: f64,
    pub extraction_volume_change: f64,
    pub convergence_status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemPatterns {
    pub recurring_issues: Vec<String>,
    pub pattern_types: Vec<String>,
    pub suggested_solutions: Vec<String>,
    pub issue_frequency: BTreeMap<String, usize>,
    pub severity_levels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationStrategy {
    pub strategies: Vec<StrategyPlan>,
    pub priority_strategy: StrategyPlan,
    pub iteration_focus: IterationFocus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEffectiveness {
    pub effectiveness: Effectiveness,
    pub average_improvement: f64,
    pub improvement_trend: Vec<f64>,
    pub total_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeFeedback {
    pub progress_analysis: ProgressAnalysis,
    pub problem_patterns: ProblemPatterns,
    pub optimization_strategy: OptimizationStrategy,
    pub iteration_effectiveness: IterationEffectiveness,
    pub should_continue_iteration: bool,
    pub current_iteration: u32,
    pub max_iterations: u32,
    pub next_steps: Vec<String>,
}

/// Percent change from `prev` to `next`; from a zero score any gain counts
/// as 100%.
pub fn relative_improvement(prev: f64, next: f64) -> f64 {
    if prev == 0.0 {
        if next > 0.0 {
            100.0
        } else {
            0.0
        }
    } else {
        (next - prev) / prev * 100.0
    }
}

pub fn improvements(scores: &[f64]) -> Vec<f64> {
    scores.windows(2).map(|w| relative_improvement(w[0], w[1])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StopConditions {
    pub budget_exhausted: bool,
    pub early_decline: bool,
    pub minimal_progress: bool,
}

impl StopConditions {
    /// `improvements` are the per-round changes in percent, oldest first.
    pub fn evaluate(current_iteration: u32, max_iterations: u32, improvements: &[f64]) -> Self {
        let recent = improvements.last().copied();
        Self {
            budget_exhausted: current_iteration >= max_iterations,
            early_decline: current_iteration * 3 <= max_iterations
                && recent.is_some_and(|r| Trend::of(r) == Trend::Declining),
            minimal_progress: recent.is_some_and(|r| r <= MINIMAL_IMPROVEMENT),
        }
    }

    pub fn any(&self) -> bool {
        self.budget_exhausted || self.early_decline || self.minimal_progress
    }
}

const DUPLICATES: &str = "duplicates";
const MISSING_TYPES: &str = "missing_types";
const DENSITY_OSCILLATION: &str = "density_oscillation";

/// Number of direction reversals in a sequence of counts.
fn reversals(volumes: &[usize]) -> usize {
    let steps: Vec<i64> = volumes
        .windows(2)
        .map(|w| (w[1] as i64 - w[0] as i64).signum())
        .filter(|&s| s != 0)
        .collect();
    steps.windows(2).filter(|w| w[0] != w[1]).count()
}

fn severity(freq: usize) -> &'static str {
    match freq {
        0 | 1 => "low",
        2 => "medium",
        _ => "high",
    }
}

fn patterns(rounds: &[&ExtractionResult], schema: &Schema) -> ProblemPatterns {
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut dup = 0;
    let mut missing = 0;
    for kg in rounds {
        let r = evaluate(kg, schema, "");
        if r.consistency.details.duplicate_entities > 0 {
            dup += 1;
        }
        let c = &r.completeness.details;
        if !c.missing_entity_types.is_empty() || !c.missing_relation_types.is_empty() {
            missing += 1;
        }
    }
    let volumes: Vec<usize> = rounds.iter().map(|k| k.item_count()).collect();
    for (name, n) in [
        (DUPLICATES, dup),
        (MISSING_TYPES, missing),
        (DENSITY_OSCILLATION, reversals(&volumes)),
    ] {
        if n > 0 {
            freq.insert(name.to_string(), n);
        }
    }
    let describe = |p: &str| match p {
        DUPLICATES => "Duplicate entities keep appearing across rounds",
        MISSING_TYPES => "Some schema types stay uncovered across rounds",
        _ => "Extraction volume swings up and down between rounds",
    };
    let solve = |p: &str| match p {
        DUPLICATES => "Normalize entity names before emitting them",
        MISSING_TYPES => "Search the text specifically for the uncovered types",
        _ => "Keep previously accepted items and only add new ones",
    };
    ProblemPatterns {
        recurring_issues: freq
            .iter()
            .filter(|(_, &n)| n >= 2)
            .map(|(p, _)| describe(p).to_string())
            .collect(),
        pattern_types: freq.keys().cloned().collect(),
        suggested_solutions: freq.keys().map(|p| solve(p).to_string()).collect(),
        severity_levels: freq
            .iter()
            .map(|(p, &n)| (p.clone(), severity(n).to_string()))
            .collect(),
        issue_frequency: freq,
    }
}

fn strategy(kind: StrategyType) -> StrategyPlan {
    let (description, actions): (&str, &[&str]) = match kind {
        StrategyType::QualityFocus => (
            "Raise the quality of the items already extracted",
            &[
                "Fix names that do not match the text",
                "Remove duplicates and conflicting relations",
            ],
        ),
        StrategyType::CoverageExpansion => (
            "Extract instances of uncovered schema types",
            &["List the uncovered types", "Scan the text for each of them"],
        ),
        StrategyType::BalancedImprovement => (
            "Improve coverage and quality together",
            &["Add missing items", "Review existing items against the text"],
        ),
        StrategyType::PatternSpecific => (
            "Address the recurring problems first",
            &["Apply the suggested solution for each detected pattern"],
        ),
    };
    StrategyPlan {
        kind,
        description: description.into(),
        actions: actions.iter().map(|a| a.to_string()).collect(),
    }
}

pub fn query_iterative_feedback(req: &IterativeRequest) -> Result<IterativeFeedback, ToolError> {
    let max = req.max_iterations.unwrap_or(DEFAULT_MAX_ITERATIONS);
    if max == 0 {
        return Err(ToolError::InvalidParam("max_iterations must be at least 1".into()));
    }
    let rounds: Vec<&ExtractionResult> = req.extraction_history.iter().chain([&req.extracted_kg]).collect();
    let scores: Vec<f64> = rounds
        .iter()
        .map(|kg| quality_score(kg, &req.schema, &req.text))
        .collect();
    let imps = improvements(&scores);
    let current_iteration = req.extraction_history.len() as u32 + 1;
    let recent = imps.last().copied().unwrap_or(0.0);
    let trend = Trend::of(recent);
    let average = (!imps.is_empty()).then(|| imps.iter().sum::<f64>() / imps.len() as f64);
    let stop = StopConditions::evaluate(current_iteration, max, &imps);
    let focus = IterationFocus::of(current_iteration, max);

    let first = scores[0];
    let last = *scores.last().expect("at least the current round");
    let convergence = if imps.is_empty() {
        "insufficient_data"
    } else if trend == Trend::Declining {
        "diverging"
    } else if recent.abs() <= MINIMAL_IMPROVEMENT {
        "converged"
    } else {
        "progressing"
    };

    let problem_patterns = patterns(&rounds, &req.schema);
    let current = evaluate(&req.extracted_kg, &req.schema, &req.text);
    let mut strategies = Vec::new();
    let c = &current.completeness.details;
    if !c.missing_entity_types.is_empty() || !c.missing_relation_types.is_empty() {
        strategies.push(strategy(StrategyType::CoverageExpansion));
    }
    if last < 0.7 {
        strategies.push(strategy(StrategyType::QualityFocus));
    }
    if !problem_patterns.pattern_types.is_empty() {
        strategies.push(strategy(StrategyType::PatternSpecific));
    }
    strategies.push(strategy(StrategyType::BalancedImprovement));
    let wanted = match focus {
        IterationFocus::CoverageExpansion => StrategyType::CoverageExpansion,
        IterationFocus::QualityImprovement => StrategyType::QualityFocus,
        IterationFocus::Refinement => StrategyType::PatternSpecific,
    };
    let priority = strategies
        .iter()
        .find(|s| s.kind == wanted)
        .unwrap_or(&strategies[0])
        .clone();

    let mut next_steps = Vec::new();
    if stop.any() {
        if stop.budget_exhausted {
            next_steps.push("Iteration budget reached".to_string());
        }
        if stop.early_decline {
            next_steps.push("Quality declined early; revert to the previous extraction".to_string());
        }
        if stop.minimal_progress {
            next_steps.push("Recent rounds brought minimal improvement".to_string());
        }
        next_steps.push("Store the current extraction with query_kg_storage".to_string());
    } else {
        next_steps.push(priority.description.clone());
        next_steps.extend(priority.actions.iter().cloned());
        next_steps.push("Re-run query_extraction_density on the new extraction".to_string());
    }

    Ok(IterativeFeedback {
        progress_analysis: ProgressAnalysis {
            trend,
            recent_improvement: recent,
            overall_quality_change: relative_improvement(first, last),
            extraction_volume_change: req.extracted_kg.item_count() as f64 - rounds[0].item_count() as f64,
            convergence_status: convergence.into(),
        },
        problem_patterns,
        optimization_strategy: OptimizationStrategy {
            strategies,
            priority_strategy: priority,
            iteration_focus: focus,
        },
        iteration_effectiveness: IterationEffectiveness {
            effectiveness: Effectiveness::of(average),
            average_improvement: average.unwrap_or(0.0),
            improvement_trend: imps,
            total_iterations: scores.len(),
        },
        should_continue_iteration: !stop.any(),
        current_iteration,
        max_iterations: max,
        next_steps,
    })
}

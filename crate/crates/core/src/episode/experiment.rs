//! Experiment loop: every agent runs over the corpus against its own store,
//! with staging promotion and aging between episodes and the mixture weight
//! adapted once per batch of episodes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{run_episode, AgentScript, EpisodeConfig, EpisodeError, EpisodeTrace, SyntheticDocument};
use crate::metrics::{coverage, GraphView};
use crate::reward::update_alpha;
use crate::store::KnowledgeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub entities: usize,
    pub relations: usize,
    pub staged: usize,
    /// Directed edge density `relations / (n (n - 1))`; 0 below two entities.
    pub density: f64,
    pub coverage: f64,
}

impl GraphStats {
    pub fn of(kg: &KnowledgeGraph, kappa: f64, h: usize) -> Self {
        let n = kg.entities.len();
        let density = if n < 2 {
            0.0
        } else {
            kg.relations.len() as f64 / (n * (n - 1)) as f64
        };
        Self {
            entities: n,
            relations: kg.relations.len(),
            staged: kg.staged.len(),
            density,
            coverage: coverage(&GraphView::from_graph(kg), kappa, h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub agent: String,
    pub doc_id: String,
    pub episode: i64,
    pub alpha_used: f64,
    pub steps: usize,
    pub env: f64,
    pub toolcall: f64,
    pub result: f64,
    pub accuracy: f64,
    pub trajectory: f64,
    pub task: f64,
    pub mixed: f64,
    pub discounted_return: f64,
    pub stored: bool,
    pub protocol_ok: bool,
    /// Quality of the final working extraction.
    pub quality: f64,
    /// Store state after promotion and aging.
    pub graph: GraphStats,
}

impl EpisodeSummary {
    fn new(t: &EpisodeTrace, graph: GraphStats) -> Self {
        let sum = |f: fn(&super::StepRecord) -> f64| t.steps.iter().map(f).sum::<f64>();
        let last = t.steps.last();
        Self {
            agent: t.agent.clone(),
            doc_id: t.doc_id.clone(),
            episode: t.episode,
            alpha_used: t.alpha,
            steps: t.steps.len(),
            env: t.env_sum(),
            toolcall: sum(|s| s.reward.toolcall),
            result: sum(|s| s.reward.result.total),
            accuracy: last.map_or(0.0, |s| s.reward.result.accuracy),
            trajectory: sum(|s| s.reward.trajectory),
            task: t.task_sum(),
            mixed: t.mixed_sum(),
            discounted_return: t.discounted_return,
            stored: t.stored,
            protocol_ok: t.protocol_ok,
            quality: last.map_or(0.0, |s| s.quality),
            graph,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaUpdate {
    pub agent: String,
    /// Episodes completed by the agent when the update fired.
    pub after_episode: usize,
    pub grad_env: f64,
    pub grad_task: f64,
    pub alpha_before: f64,
    pub alpha_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub mean_mixed: f64,
    pub mean_env: f64,
    pub mean_task: f64,
    pub stored_rate: f64,
    pub protocol_rate: f64,
    pub final_alpha: f64,
    pub final_graph: GraphStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub episodes: Vec<EpisodeSummary>,
    pub alpha_updates: Vec<AlphaUpdate>,
    pub agents: Vec<AgentReport>,
    pub traces: Vec<EpisodeTrace>,
}

impl ExperimentReport {
    /// One JSON object per line, tagged by `record`: every episode summary,
    /// then the alpha updates, then one line per agent.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.episodes {
            push_record(&mut out, "episode", e);
        }
        for a in &self.alpha_updates {
            push_record(&mut out, "alpha_update", a);
        }
        for a in &self.agents {
            push_record(&mut out, "agent_summary", a);
        }
        out
    }

    /// Plain-text table of the per-agent means.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>12} {:>10} {:>10} {:>10} {:>8} {:>8} {:>7}",
            "agent", "episodes", "mean_return", "mean_mixed", "mean_env", "mean_task", "stored", "proto", "alpha"
        );
        for a in &self.agents {
            let _ = writeln!(
                s,
                "{:<16} {:>8} {:>12.4} {:>10.4} {:>10.4} {:>10.4} {:>8.3} {:>8.3} {:>7.4}",
                a.agent,
                a.episodes,
                a.mean_return,
                a.mean_mixed,
                a.mean_env,
                a.mean_task,
                a.stored_rate,
                a.protocol_rate,
                a.final_alpha
            );
        }
        s
    }

    pub fn agent(&self, name: &str) -> Option<&AgentReport> {
        self.agents.iter().find(|a| a.agent == name)
    }
}

fn push_record<T: Serialize>(out: &mut String, tag: &str, x: &T) {
    let mut obj = serde_json::Map::new();
    obj.insert("record".into(), tag.into());
    if let Ok(serde_json::Value::Object(m)) = serde_json::to_value(x) {
        obj.extend(m);
    }
    out.push_str(&serde_json::Value::Object(obj).to_string());
    out.push('\n');
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Run every agent for `episodes_per_doc` passes over `corpus`.
///
/// Episode `i` of an agent (counted across passes) runs at
/// `cfg.start + i days`. After each episode staged relations are promoted
/// and aging is applied. After every `cfg.batch_size` episodes, and after a
/// final partial batch, the mixture weight takes one projected step driven
/// by the batch means of the summed environment and task rewards.
pub fn run_experiment(
    agents: &[AgentScript],
    corpus: &[SyntheticDocument],
    episodes_per_doc: usize,
    cfg: &EpisodeConfig,
) -> Result<ExperimentReport, EpisodeError> {
    cfg.validate()?;
    let sp = &cfg.spectral;
    let mut report = ExperimentReport {
        seed: cfg.seed,
        episodes: Vec::new(),
        alpha_updates: Vec::new(),
        agents: Vec::new(),
        traces: Vec::new(),
    };
    for agent in agents {
        let mut store = match corpus.first() {
            Some(d) => KnowledgeGraph::with_schema(d.schema.clone()),
            None => KnowledgeGraph::new(),
        };
        let mut ecfg = cfg.clone();
        let mut batch: Vec<(f64, f64)> = Vec::new();
        let mut done = 0usize;
        let first = report.episodes.len();
        let flush = |batch: &mut Vec<(f64, f64)>, ecfg: &mut EpisodeConfig, done: usize, out: &mut Vec<AlphaUpdate>| {
            if batch.is_empty() {
                return;
            }
            let grad_env = mean(batch.iter().map(|b| b.0));
            let grad_task = mean(batch.iter().map(|b| b.1));
            let before = ecfg.reward.alpha;
            ecfg.reward.alpha = update_alpha(before, grad_env, grad_task, ecfg.reward.eta_alpha);
            out.push(AlphaUpdate {
                agent: agent.name.clone(),
                after_episode: done,
                grad_env,
                grad_task,
                alpha_before: before,
                alpha_after: ecfg.reward.alpha,
            });
            batch.clear();
        };
        for _ in 0..episodes_per_doc {
            for doc in corpus {
                let ep = done as i64;
                let trace = run_episode(agent, doc, &mut store, &ecfg, ep)?;
                let now = ecfg.clock(ep);
                store.promote_staged(ecfg.tau_conf, ecfg.tau_votes, now);
                store.apply_aging(now, ecfg.aging)?;
                report
                    .episodes
                    .push(EpisodeSummary::new(&trace, GraphStats::of(&store, sp.kappa, sp.h)));
                batch.push((trace.env_sum(), trace.task_sum()));
                report.traces.push(trace);
                done += 1;
                if batch.len() == ecfg.batch_size {
                    flush(&mut batch, &mut ecfg, done, &mut report.alpha_updates);
                }
            }
        }
        flush(&mut batch, &mut ecfg, done, &mut report.alpha_updates);
        let mine = &report.episodes[first..];
        report.agents.push(AgentReport {
            agent: agent.name.clone(),
            episodes: mine.len(),
            mean_return: mean(mine.iter().map(|e| e.discounted_return)),
            mean_mixed: mean(mine.iter().map(|e| e.mixed)),
            mean_env: mean(mine.iter().map(|e| e.env)),
            mean_task: mean(mine.iter().map(|e| e.task)),
            stored_rate: mean(mine.iter().map(|e| f64::from(u8::from(e.stored)))),
            protocol_rate: mean(mine.iter().map(|e| f64::from(u8::from(e.protocol_ok)))),
            final_alpha: ecfg.reward.alpha,
            final_graph: GraphStats::of(&store, sp.kappa, sp.h),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{default_schema, generate_corpus};

    #[test]
    fn single_episode_single_update() {
        let corpus = generate_corpus(1, 1, &default_schema()).unwrap();
        let agents = [AgentScript::new("a", 0.9, 0.1, 1)];
        let r = run_experiment(&agents, &corpus, 1, &EpisodeConfig::default()).unwrap();
        assert_eq!(r.traces.len(), 1);
        assert_eq!(r.episodes.len(), 1);
        assert_eq!(r.alpha_updates.len(), 1);
        assert_eq!(r.to_jsonl().lines().count(), 3);
    }

    #[test]
    fn batches_of_eight() {
        let corpus = generate_corpus(2, 10, &default_schema()).unwrap();
        let agents = [AgentScript::new("a", 0.8, 0.2, 1), AgentScript::new("b", 0.5, 0.5, 2)];
        let r = run_experiment(&agents, &corpus, 2, &EpisodeConfig::default()).unwrap();
        assert_eq!(r.episodes.len(), 40);
        // 20 episodes per agent: batches end after 8, 16 and 20
        let after: Vec<usize> = r.alpha_updates.iter().map(|u| u.after_episode).collect();
        assert_eq!(after, vec![8, 16, 20, 8, 16, 20]);
        for u in &r.alpha_updates {
            assert!((0.0..=1.0).contains(&u.alpha_after));
        }
        for w in r.alpha_updates.windows(2).filter(|w| w[0].agent == w[1].agent) {
            assert_eq!(w[0].alpha_after, w[1].alpha_before);
        }
        let table = r.summary_table();
        assert!(table.contains("mean_return") && table.lines().count() == 3);
    }

    #[test]
    fn reports_are_deterministic() {
        let corpus = generate_corpus(5, 4, &default_schema()).unwrap();
        let agents = [AgentScript::new("a", 0.7, 0.3, 4)];
        let cfg = EpisodeConfig::default();
        let a = run_experiment(&agents, &corpus, 2, &cfg).unwrap();
        let b = run_experiment(&agents, &corpus, 2, &cfg).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn empty_inputs_give_empty_report() {
        let r = run_experiment(&[], &[], 3, &EpisodeConfig::default()).unwrap();
        assert!(r.episodes.is_empty() && r.alpha_updates.is_empty());
    }
}

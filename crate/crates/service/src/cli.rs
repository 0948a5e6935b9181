//! The `kgr` command line.
//!
//! Exit codes: 0 on success, 1 when a command fails, 2 for usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgr_core::compression::{bound_check, random_mdp, BoundReport, MdpSpec};
use kgr_core::episode::{
    default_schema, generate_corpus, run_episode, run_experiment, AgentScript, Behavior, EpisodeConfig,
    SyntheticDocument,
};
use kgr_core::metrics::{GraphDiagnostics, GraphView};
use kgr_core::store::{export_cypher, load_jsonl, save_jsonl};
use kgr_core::update::{cover_select, EdgeCandidate, SearchMode};
use kgr_core::KnowledgeGraph;

use crate::config::ServiceConfig;
use crate::server;

#[derive(Debug, Parser)]
#[command(
    name = "kgr",
    version,
    about = "Knowledge-graph co-evolution environment: tool service, episodes and diagnostics",
    subcommand_required = true,
    arg_required_else_help = true
)]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random draw (overrides KGR_SEED and the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the tools over HTTP.
    Serve {
        /// Address to bind, e.g. 127.0.0.1:8080.
        #[arg(long)]
        bind: Option<String>,
        #[command(flatten)]
        store: StoreArg,
    },
    /// Run one scripted episode on a document and print its trace.
    Episode {
        /// JSON file holding a document or an array of documents.
        #[arg(long, value_name = "FILE")]
        doc: PathBuf,
        /// Which document of an array to use.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[command(flatten)]
        agent: AgentArgs,
        /// Episode number; sets the episode clock.
        #[arg(long, default_value_t = 0)]
        episode: i64,
        /// Store to run against; it is created when missing and saved after.
        #[command(flatten)]
        store: StoreArg,
    },
    /// Run scripted agents over a synthetic corpus.
    Experiment {
        #[arg(long, default_value_t = 4)]
        docs: usize,
        #[arg(long, default_value_t = 5)]
        episodes_per_doc: usize,
        /// Agent as NAME:FIDELITY:NOISE; repeatable.
        #[arg(long = "agent", value_name = "SPEC", default_values_t = [
            "clean:0.9:0.05".to_string(),
            "noisy:0.6:0.4".to_string(),
        ])]
        agents: Vec<String>,
        /// Line-delimited JSON report; stdout when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Print graph diagnostics of a stored graph.
    Metrics {
        #[arg(long, value_name = "FILE", required = true)]
        store: PathBuf,
    },
    /// Choose up to K candidate edges maximizing coverage of a stored graph.
    Cover {
        #[arg(long, value_name = "FILE", required = true)]
        store: PathBuf,
        /// JSON array of {key: {src_id, dst_id, rel_type}, confidence}.
        #[arg(long, value_name = "FILE")]
        candidates: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Greedy)]
        mode: ModeArg,
    },
    /// Check the compression bound on N seeded random decision processes.
    BoundCheck {
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Line-delimited JSON reports; stdout when omitted.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Print a stored graph as Cypher statements.
    ExportCypher {
        #[arg(long, value_name = "FILE", required = true)]
        store: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus as a JSON array of documents.
    Corpus {
        #[arg(long, default_value_t = 4)]
        docs: usize,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct StoreArg {
    /// Line-delimited JSON store (overrides KGR_DB_PATH).
    #[arg(long = "store", value_name = "FILE")]
    path: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AgentArgs {
    #[arg(long, default_value = "agent")]
    name: String,
    #[arg(long, default_value_t = 0.9)]
    fidelity: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, value_enum, default_value_t = BehaviorArg::Compliant)]
    behavior: BehaviorArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BehaviorArg {
    Compliant,
    NeverExtract,
    SkipDisambiguation,
}

impl From<BehaviorArg> for Behavior {
    fn from(b: BehaviorArg) -> Self {
        match b {
            BehaviorArg::Compliant => Behavior::Compliant,
            BehaviorArg::NeverExtract => Behavior::NeverExtract,
            BehaviorArg::SkipDisambiguation => Behavior::SkipDisambiguation,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Greedy,
    Exhaustive,
}

impl From<ModeArg> for SearchMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Greedy => SearchMode::Greedy,
            ModeArg::Exhaustive => SearchMode::Exhaustive,
        }
    }
}

/// Parse `args` (program name first), run the command and return the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn resolve_config(cli: &Cli) -> anyhow::Result<ServiceConfig> {
    let mut cfg = ServiceConfig::default();
    if let Some(p) = &cli.config {
        cfg.apply_file(p)?;
    }
    cfg.apply_env()?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn episode_config(cfg: &ServiceConfig) -> EpisodeConfig {
    EpisodeConfig {
        reward: cfg.reward,
        spectral: cfg.spectral,
        update: cfg.update.clone(),
        seed: cfg.seed,
        ..EpisodeConfig::default()
    }
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Load an existing store; a missing file is an error here.
fn open_existing(path: &Path) -> anyhow::Result<KnowledgeGraph> {
    if !path.exists() {
        bail!("store not found: {}", path.display());
    }
    load_jsonl(path).with_context(|| format!("cannot load store {}", path.display()))
}

fn parse_agent(spec: &str, seed: u64) -> anyhow::Result<AgentScript> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [name, fidelity, noise] = parts[..] else {
        bail!("agent spec {spec:?} is not NAME:FIDELITY:NOISE");
    };
    let num = |v: &str, what: &str| -> anyhow::Result<f64> {
        let x: f64 = v
            .parse()
            .with_context(|| format!("bad {what} in agent spec {spec:?}"))?;
        if !(0.0..=1.0).contains(&x) {
            bail!("{what} in agent spec {spec:?} must lie in [0, 1]");
        }
        Ok(x)
    };
    Ok(AgentScript::new(
        name,
        num(fidelity, "fidelity")?,
        num(noise, "noise")?,
        seed,
    ))
}

fn read_documents(path: &Path) -> anyhow::Result<Vec<SyntheticDocument>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
    let docs = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|d| vec![d])
    };
    docs.with_context(|| format!("{} does not hold documents", path.display()))
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Serve { bind, store } => {
            if let Some(b) = bind {
                cfg.set("bind", &b)?;
            }
            if let Some(p) = store.path {
                cfg.store_path = Some(p);
            }
            cfg.validate()?;
            let _ = tracing_subscriber::fmt()
                .with_max_level(cfg.log_level)
                .with_writer(std::io::stderr)
                .try_init();
            tokio::runtime::Runtime::new()?.block_on(server::serve(&cfg))
        }
        Command::Episode {
            doc,
            index,
            agent,
            episode,
            store,
        } => {
            cfg.validate()?;
            let docs = read_documents(&doc)?;
            let Some(doc) = docs.get(index) else {
                bail!("document index {index} out of range ({} documents)", docs.len());
            };
            let path = store.path.or(cfg.store_path.clone());
            let mut kg = match &path {
                Some(p) => load_jsonl(p).with_context(|| format!("cannot load store {}", p.display()))?,
                None => KnowledgeGraph::new(),
            };
            if kg.schema.is_none() {
                kg.schema = Some(doc.schema.clone());
            }
            let script = parse_agent(&format!("{}:{}:{}", agent.name, agent.fidelity, agent.noise), cfg.seed)?
                .with_behavior(agent.behavior.into());
            let trace = run_episode(&script, doc, &mut kg, &episode_config(&cfg), episode)?;
            if let Some(p) = &path {
                save_jsonl(&kg, p).with_context(|| format!("cannot save store {}", p.display()))?;
            }
            emit(None, &format!("{}\n", serde_json::to_string_pretty(&trace)?))
        }
        Command::Experiment {
            docs,
            episodes_per_doc,
            agents,
            out,
        } => {
            cfg.validate()?;
            let scripts = agents
                .iter()
                .enumerate()
                .map(|(i, s)| parse_agent(s, cfg.seed.wrapping_add(i as u64 + 1)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let corpus = generate_corpus(cfg.seed, docs, &default_schema())?;
            let report = run_experiment(&scripts, &corpus, episodes_per_doc, &episode_config(&cfg))?;
            emit(out.as_deref(), &report.to_jsonl())?;
            if out.is_some() {
                print!("{}", report.summary_table());
            } else {
                eprint!("{}", report.summary_table());
            }
            Ok(())
        }
        Command::Metrics { store } => {
            cfg.validate()?;
            let kg = open_existing(&store)?;
            let d = GraphDiagnostics::of(&kg, &cfg.spectral);
            emit(None, &format!("{}\n", serde_json::to_string_pretty(&d)?))
        }
        Command::Cover {
            store,
            candidates,
            k,
            mode,
        } => {
            cfg.validate()?;
            let kg = open_existing(&store)?;
            let text = std::fs::read_to_string(&candidates)
                .with_context(|| format!("cannot read {}", candidates.display()))?;
            let cands: Vec<EdgeCandidate> = serde_json::from_str(&text)
                .with_context(|| format!("{} is not a JSON array of candidates", candidates.display()))?;
            let g = GraphView::from_graph(&kg);
            let sel = cover_select(&g, &cands, k, cfg.spectral.kappa, cfg.spectral.h, mode.into())?;
            emit(None, &format!("{}\n", serde_json::to_string_pretty(&sel)?))
        }
        Command::BoundCheck { n, out } => {
            let mut text = String::new();
            let mut holds = 0;
            for i in 0..n {
                let seed = cfg.seed.wrapping_add(i as u64);
                let report: BoundReport = bound_check(&random_mdp(MdpSpec::sampled(seed), seed)?)?;
                holds += usize::from(report.holds);
                text.push_str(&serde_json::to_string(&report)?);
                text.push('\n');
            }
            emit(out.as_deref(), &text)?;
            eprintln!("{n} reports, bound held on {holds}");
            Ok(())
        }
        Command::ExportCypher { store, out } => {
            let kg = open_existing(&store)?;
            emit(out.as_deref(), &export_cypher(&kg))
        }
        Command::Corpus { docs, out } => {
            let corpus = generate_corpus(cfg.seed, docs, &default_schema())?;
            emit(out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&corpus)?))
        }
    }
}

//! Executable environment for agent / knowledge-graph co-evolution.
//!
//! The crate is organised by subsystem:
//!
//! - [`store`]: typed knowledge-graph state with staging, promotion, aging,
//!   snapshots, validation, JSONL persistence and Cypher export.
//! - [`metrics`]: Laplacian spectral terms, von Neumann entropy, coverage,
//!   degree entropy and temporal consistency over a [`metrics::GraphView`].
//! - [`retrieval`]: Gibbs retrieval distribution over connected subgraphs,
//!   Monte Carlo partition estimates, GNN readout and cross-attention fusion.
//! - [`update`]: the constrained graph-update operator, the coverage
//!   selector and an empirical contraction probe.
//! - [`reward`]: toolcall, result, trajectory and environmental rewards,
//!   the dual mixture and the projected `alpha` update.
//! - [`tools`]: the six extraction-feedback tools with their JSON contracts.
//! - [`episode`]: synthetic corpora, scripted agents, the tool-ordering
//!   protocol and the experiment loop.
//! - [`compression`]: multi-scale attention compression and a verifier for
//!   the compression performance bound on tabular decision processes.

pub mod compression;
pub mod episode;
pub mod extraction;
pub mod metrics;
pub mod retrieval;
pub mod reward;
pub mod store;
pub mod tools;
pub mod update;

pub use extraction::{ExtractionResult, RelationMention, Schema, SchemaError};
pub use store::KnowledgeGraph;

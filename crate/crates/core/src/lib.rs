//! Knowledge acquisition and knowledge-graph retrieval-augmented generation.
//!
//! The crate has two halves. [`agents`] runs a meta-agent that decomposes a
//! task into per-source retrieval subtasks, schedules them as a DAG, and
//! refines the aggregated answer against a judge. The rest of the crate turns
//! a document corpus into a knowledge graph ([`chunking`] → [`kg_extract`] →
//! [`graph`]) and answers questions over it ([`retrieve`]).
//!
//! Every model-backed step goes through a trait in [`providers`]. The mock
//! providers are pure functions of their seed and inputs, so the whole
//! pipeline is reproducible offline.

pub mod agents;
pub mod chunking;
pub mod corpus;
mod error;
pub mod eval;
pub mod graph;
pub mod kg_extract;
mod par;
pub mod pipeline;
pub mod prompt;
pub mod providers;
pub mod retrieve;
pub mod vector;

pub use error::{Error, ErrorClass, Result};

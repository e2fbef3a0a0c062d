//! Provider contracts for every model-backed step.
//!
//! Four traits cover the external capabilities the pipeline needs: text and
//! image embeddings, text generation, per-source search, and answer judging.
//! [`mock`] implements all four as deterministic pure functions; the `http`
//! feature adds network-backed implementations. [`ProviderConfig::kind`] is
//! the single switch between the two.

mod config;
#[cfg(feature = "http")]
pub mod http;
pub mod judge;
pub mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, SourceKind};
use crate::vector;

pub use config::{build_providers, ProviderConfig, ProviderKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider misconfigured: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// A dense embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    /// Builds a unit-length embedding; zero vectors stay zero.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        vector::normalize(&mut values);
        Embedding(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        vector::l2_norm(&self.0)
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        vector::cosine(&self.0, &other.0)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError>;
    /// Embeds an image referenced by path or URL into the text space.
    fn embed_image(&self, image_ref: &str) -> Result<Embedding, ProviderError>;
}

pub trait GenerationProvider: Send + Sync {
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, ProviderError>;
}

pub trait SearchProvider: Send + Sync {
    fn search(
        &self,
        kind: SourceKind,
        query: &str,
        limit: usize,
    ) -> Result<Vec<Document>, ProviderError>;
}

pub trait JudgeProvider: Send + Sync {
    fn judge(&self, query: &str, answer: &str) -> Result<Feedback, ProviderError>;
}

/// The five rubric dimensions, each scored on a continuous 0–4 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rubric {
    Helpfulness,
    Correctness,
    Coherence,
    Complexity,
    Verbosity,
}

impl Rubric {
    pub const ALL: [Rubric; 5] = [
        Rubric::Helpfulness,
        Rubric::Correctness,
        Rubric::Coherence,
        Rubric::Complexity,
        Rubric::Verbosity,
    ];

    pub const MAX_SCORE: f64 = 4.0;

    pub fn as_str(self) -> &'static str {
        match self {
            Rubric::Helpfulness => "helpfulness",
            Rubric::Correctness => "correctness",
            Rubric::Coherence => "coherence",
            Rubric::Complexity => "complexity",
            Rubric::Verbosity => "verbosity",
        }
    }
}

impl fmt::Display for Rubric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub scores: BTreeMap<Rubric, f64>,
    pub accept: bool,
    pub comments: String,
}

impl Feedback {
    /// Builds feedback from one score per rubric key, clamping into [0, 4].
    /// `accept` starts false; the refinement loop decides acceptance.
    pub fn from_scores(scores: [f64; 5], comments: impl Into<String>) -> Self {
        let scores = Rubric::ALL
            .iter()
            .zip(scores)
            .map(|(&k, v)| (k, if v.is_nan() { 0.0 } else { v.clamp(0.0, Rubric::MAX_SCORE) }))
            .collect();
        Feedback {
            scores,
            accept: false,
            comments: comments.into(),
        }
    }

    pub fn score(&self, key: Rubric) -> f64 {
        self.scores.get(&key).copied().unwrap_or(0.0)
    }

    pub fn min_score(&self) -> f64 {
        Rubric::ALL
            .iter()
            .map(|&k| self.score(k))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_complete(&self) -> bool {
        Rubric::ALL.iter().all(|k| self.scores.contains_key(k))
    }
}

/// Handles to one implementation of each provider contract.
#[derive(Clone)]
pub struct Providers {
    pub embed: Arc<dyn EmbeddingProvider>,
    pub generate: Arc<dyn GenerationProvider>,
    pub search: Arc<dyn SearchProvider>,
    pub judge: Arc<dyn JudgeProvider>,
}

impl Providers {
    /// Mock providers with the built-in entity pattern table and an empty
    /// search index.
    pub fn mock(seed: u64) -> Self {
        let embed = Arc::new(mock::MockEmbedder::new(seed));
        Providers {
            embed: embed.clone(),
            generate: Arc::new(mock::MockGenerator::new(seed)),
            search: Arc::new(mock::FixtureSearch::empty(embed)),
            judge: Arc::new(mock::MockJudge::new()),
        }
    }

    pub fn with_search(mut self, search: Arc<dyn SearchProvider>) -> Self {
        self.search = search;
        self
    }

    pub fn with_generator(mut self, generate: Arc<dyn GenerationProvider>) -> Self {
        self.generate = generate;
        self
    }

    pub fn with_judge(mut self, judge: Arc<dyn JudgeProvider>) -> Self {
        self.judge = judge;
        self
    }
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Providers").finish_non_exhaustive()
    }
}

//! Corpus to summarized knowledge graph.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::chunking::{chunk_document, contextualize, Chunk, DEFAULT_CONTEXT_BUDGET, DEFAULT_STRIDE, DEFAULT_WINDOW};
use crate::corpus::{Corpus, Document};
use crate::graph::{KnowledgeGraph, LeidenConfig};
use crate::kg_extract::{
    entities_from_mentions, extract_entities, extract_relations, merge_duplicates, DedupConfig, EntityMention, Triple,
    DEFAULT_MAX_TRIPLES,
};
use crate::par::par_map;
use crate::providers::{EmbeddingProvider, GenerationProvider};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkingConfig {
    pub window: usize,
    pub stride: usize,
    pub context_budget: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            context_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("chunking.window must be >= 1".into()));
        }
        if self.stride == 0 || self.stride > self.window {
            return Err(Error::Config("chunking.stride must satisfy 1 <= stride <= window".into()));
        }
        if self.context_budget == 0 {
            return Err(Error::Config("chunking.context_budget must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub chunking: ChunkingConfig,
    pub max_triples: usize,
    pub dedup: DedupConfig,
    pub community: LeidenConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            chunking: ChunkingConfig::default(),
            max_triples: DEFAULT_MAX_TRIPLES,
            dedup: DedupConfig::default(),
            community: LeidenConfig::default(),
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        self.chunking.validate()?;
        if self.max_triples == 0 {
            return Err(Error::Config("max_triples must be >= 1".into()));
        }
        self.dedup.validate()?;
        self.community.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BuildStats {
    pub documents: usize,
    pub chunks: usize,
    pub skipped_chunks: usize,
    pub mentions: usize,
    pub raw_entities: usize,
    pub raw_triples: usize,
    pub entities: usize,
    pub triples: usize,
    /// Community count per level, finest first.
    pub communities: Vec<usize>,
    pub summary_calls: usize,
}

struct Extracted {
    mentions: Vec<EntityMention>,
    triples: Vec<Triple>,
}

fn extract_chunk(doc: &Document, chunk: &Chunk, gen: &dyn GenerationProvider, cfg: &BuildConfig) -> Result<Extracted> {
    let cc = contextualize(doc, chunk, gen, cfg.chunking.context_budget)?;
    let mentions = extract_entities(&cc, gen)?;
    let triples = extract_relations(&cc, &mentions, gen, cfg.max_triples)?;
    Ok(Extracted { mentions, triples })
}

/// Chunks, contextualizes and extracts every document, merges duplicate
/// entities, detects communities and summarizes them. Chunks whose
/// extraction output cannot be parsed are skipped with a warning; provider
/// failures abort the build.
pub fn build_graph(
    corpus: &Corpus,
    cfg: &BuildConfig,
    gen: &dyn GenerationProvider,
    embed: &dyn EmbeddingProvider,
) -> Result<(KnowledgeGraph, BuildStats)> {
    cfg.validate()?;
    let mut work: Vec<(&Document, Chunk)> = Vec::new();
    for doc in corpus.documents() {
        if doc.text.trim().is_empty() {
            continue;
        }
        for chunk in chunk_document(doc, cfg.chunking.window, cfg.chunking.stride)? {
            work.push((doc, chunk));
        }
    }
    let mut stats = BuildStats {
        documents: corpus.len(),
        chunks: work.len(),
        ..Default::default()
    };

    let results = par_map(&work, |(doc, chunk)| extract_chunk(doc, chunk, gen, cfg));
    let mut mentions = Vec::new();
    let mut triples = Vec::new();
    for ((_, chunk), r) in work.iter().zip(results) {
        match r {
            Ok(x) => {
                mentions.extend(x.mentions);
                triples.extend(x.triples);
            }
            Err(e @ (Error::ExtractionFormat { .. } | Error::Contract(_))) => {
                warn!("skipping chunk {}: {e}", chunk.chunk_ref());
                stats.skipped_chunks += 1;
            }
            Err(e) => return Err(e),
        }
    }
    stats.mentions = mentions.len();
    stats.raw_triples = triples.len();

    let entities = entities_from_mentions(&mentions, embed)?;
    stats.raw_entities = entities.len();
    let (entities, triples) = merge_duplicates(&entities, &triples, &cfg.dedup);
    stats.entities = entities.len();
    stats.triples = triples.len();

    let mut graph = KnowledgeGraph::new(entities, triples)?;
    graph.detect_communities(&cfg.community);
    stats.summary_calls = graph.summarize_communities(gen, embed)?;
    stats.communities = (0..graph.level_count())
        .map(|l| graph.communities_at(Some(l)).len())
        .collect();
    info!(
        "built graph: {} entities, {} triples, communities per level {:?}",
        stats.entities, stats.triples, stats.communities
    );
    Ok((graph, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceKind;
    use crate::providers::mock::{Failing, MockEmbedder, MockGenerator, ScriptedGenerator};

    fn corpus() -> Corpus {
        Corpus::from_documents(vec![
            Document::new(
                "d1",
                SourceKind::Wiki,
                "Refining",
                "Crude oil enters the distillation column. The distillation column produces naphtha. \
                 Naphtha feeds the catalytic reformer.",
            ),
            Document::new(
                "d2",
                SourceKind::Web,
                "Hydroxide",
                "Lithium carbonate reacts with calcium hydroxide in the reactor. The reactor yields LiOH.",
            ),
            Document::new("img", SourceKind::Image, "diagram", ""),
        ])
        .unwrap()
    }

    #[test]
    fn builds_a_summarized_graph_deterministically() {
        let (gen, embed) = (MockGenerator::new(42), MockEmbedder::new(42));
        let (g, stats) = build_graph(&corpus(), &BuildConfig::default(), &gen, &embed).unwrap();
        assert_eq!(stats.chunks, 2);
        assert!(stats.entities >= 4 && stats.triples >= 3, "{stats:?}");
        assert!(g.communities().iter().all(|c| c.summary_embedding.is_some()));
        let (g2, _) = build_graph(&corpus(), &BuildConfig::default(), &gen, &embed).unwrap();
        assert_eq!(g.checksum(), g2.checksum());
    }

    #[test]
    fn unparseable_chunks_are_skipped() {
        let gen = ScriptedGenerator::sequence(vec!["Context".into(), "gibberish".into()]);
        let (g, stats) = build_graph(&corpus(), &BuildConfig::default(), &gen, &MockEmbedder::new(1)).unwrap();
        assert_eq!(stats.skipped_chunks, 2);
        assert_eq!(g.entity_count(), 0);
    }

    #[test]
    fn provider_failure_aborts() {
        assert!(matches!(
            build_graph(&corpus(), &BuildConfig::default(), &Failing, &MockEmbedder::new(1)),
            Err(Error::Provider { .. })
        ));
    }

    #[test]
    fn invalid_chunking_is_a_config_error() {
        let mut cfg = BuildConfig::default();
        cfg.chunking.stride = 2000;
        assert!(matches!(
            build_graph(&corpus(), &cfg, &MockGenerator::new(1), &MockEmbedder::new(1)),
            Err(Error::Config(_))
        ));
    }
}

//! Knowledge graph store, community detection and community summaries.
//!
//! Entities are nodes and triples are directed, predicate-labelled edges.
//! Community detection and modularity use the undirected projection of the
//! triple multigraph, where each node pair is weighted by the number of
//! triples linking it in either direction.

mod community;
pub mod leiden;
pub mod modularity;
mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::kg_extract::{Entity, Triple};
use crate::providers::Embedding;
use crate::{Error, Result};

pub use community::{
    community_serialization, summarize_community, Community, CommunityId, SUMMARY_MAX_TOKENS,
};
pub use leiden::LeidenConfig;
pub use modularity::WeightedGraph;
pub use store::{GRAPH_FORMAT, GRAPH_VERSION};

/// Node-to-community assignment for one hierarchy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub level: usize,
    pub assignment: BTreeMap<String, usize>,
    pub modularity: f64,
}

/// Cached summary for one serialized community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedSummary {
    pub summary: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeGraph {
    entities: BTreeMap<String, Entity>,
    triples: Vec<Triple>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
    communities: Vec<Community>,
    partitions: Vec<Partition>,
    summary_cache: BTreeMap<String, CachedSummary>,
}

impl KnowledgeGraph {
    /// Builds a graph; every triple endpoint must name an entity.
    pub fn new(entities: Vec<Entity>, triples: Vec<Triple>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in entities {
            let id = e.id.clone();
            if map.insert(id.clone(), e).is_some() {
                return Err(Error::Conflict(id));
            }
        }
        let mut adjacency: BTreeMap<String, BTreeSet<String>> =
            map.keys().map(|k| (k.clone(), BTreeSet::new())).collect();
        for t in &triples {
            for end in [&t.subject, &t.object] {
                if !map.contains_key(end) {
                    return Err(Error::GraphFile(format!("triple references unknown entity {end:?}")));
                }
            }
            if t.predicate.is_empty() {
                return Err(Error::GraphFile(format!(
                    "empty predicate on {} -> {}",
                    t.subject, t.object
                )));
            }
            if t.subject != t.object {
                adjacency.get_mut(&t.subject).expect("checked").insert(t.object.clone());
                adjacency.get_mut(&t.object).expect("checked").insert(t.subject.clone());
            }
        }
        Ok(KnowledgeGraph {
            entities: map,
            triples,
            adjacency,
            ..Default::default()
        })
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Undirected neighbor set, without self.
    pub fn neighbors(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.adjacency.get(id)
    }

    pub fn communities(&self) -> &[Community] {
        &self.communities
    }

    pub fn community(&self, id: CommunityId) -> Option<&Community> {
        self.communities.iter().find(|c| c.id == id)
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn level_count(&self) -> usize {
        self.partitions.len()
    }

    pub fn summary_cache(&self) -> &BTreeMap<String, CachedSummary> {
        &self.summary_cache
    }

    /// Entity ids in index order of [`KnowledgeGraph::projection`].
    pub fn node_ids(&self) -> Vec<&str> {
        self.entities.keys().map(String::as_str).collect()
    }

    /// Undirected weighted projection over entities in id order.
    pub fn projection(&self) -> WeightedGraph {
        let index: BTreeMap<&str, usize> = self
            .entities
            .keys()
            .enumerate()
            .map(|(i, k)| (k.as_str(), i))
            .collect();
        WeightedGraph::from_edges(
            self.entities.len(),
            self.triples
                .iter()
                .map(|t| (index[t.subject.as_str()], index[t.object.as_str()], 1.0)),
        )
    }

    fn membership_of(&self, assignment: &BTreeMap<String, usize>) -> Result<Vec<usize>> {
        self.entities
            .keys()
            .map(|id| {
                assignment
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::IncompletePartition(id.clone()))
            })
            .collect()
    }

    /// Runs Leiden on the projection and replaces the stored partitions and
    /// communities. Summaries of unchanged communities are recovered from the
    /// cache by [`KnowledgeGraph::summarize_communities`].
    pub fn detect_communities(&mut self, cfg: &LeidenConfig) {
        let ids: Vec<String> = self.entities.keys().cloned().collect();
        let g = self.projection();
        let levels = leiden::leiden(&g, cfg);
        self.partitions = levels
            .iter()
            .enumerate()
            .map(|(level, l)| Partition {
                level,
                assignment: ids.iter().cloned().zip(l.membership.iter().copied()).collect(),
                modularity: l.modularity,
            })
            .collect();
        self.communities = self
            .partitions
            .iter()
            .flat_map(|p| community::communities_of(self, p))
            .collect();
    }

    /// Summarizes and embeds every community. Cached serializations skip the
    /// generator; returns the number of generation calls made.
    pub fn summarize_communities(
        &mut self,
        gen: &dyn crate::providers::GenerationProvider,
        embed: &dyn crate::providers::EmbeddingProvider,
    ) -> Result<usize> {
        let pending: Vec<(usize, String, String)> = self
            .communities
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let text = community_serialization(c, self);
                (i, community::cache_key(&text), text)
            })
            .collect();
        let misses: Vec<&(usize, String, String)> = {
            let mut seen = BTreeSet::new();
            pending
                .iter()
                .filter(|(_, k, _)| !self.summary_cache.contains_key(k) && seen.insert(k.clone()))
                .collect()
        };
        let generated = crate::par::par_map(&misses, |(i, key, text)| {
            let c = &self.communities[*i];
            let summary = community::generate_summary(c.id, text, gen)?;
            let embedding = embed
                .embed_text(&summary)
                .map_err(|e| Error::provider(format!("embedding summary of community {}", c.id), e))?;
            Ok::<_, Error>((key.clone(), CachedSummary { summary, embedding }))
        });
        let calls = generated.len();
        for entry in generated {
            let (key, cached) = entry?;
            self.summary_cache.insert(key, cached);
        }
        for (i, key, _) in pending {
            let cached = &self.summary_cache[&key];
            self.communities[i].summary = Some(cached.summary.clone());
            self.communities[i].summary_embedding = Some(cached.embedding.clone());
        }
        Ok(calls)
    }

    /// Modularity of an assignment over this graph's projection.
    pub fn modularity(&self, assignment: &BTreeMap<String, usize>) -> Result<f64> {
        let membership = self.membership_of(assignment)?;
        let labels = modularity::canonical_labels(&membership);
        Ok(modularity::modularity(&self.projection(), &labels))
    }

    /// Communities at `level`, or at every level when `None`.
    pub fn communities_at(&self, level: Option<usize>) -> Vec<&Community> {
        self.communities
            .iter()
            .filter(|c| level.is_none_or(|l| c.id.level == l))
            .collect()
    }
}

/// Free-function form of [`KnowledgeGraph::modularity`].
pub fn modularity(graph: &KnowledgeGraph, partition: &Partition) -> Result<f64> {
    graph.modularity(&partition.assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunking::ChunkRef;
    use crate::providers::mock::{Counting, MockEmbedder, MockGenerator};

    pub(crate) fn entity(name: &str) -> Entity {
        Entity::new(
            "T",
            name,
            Embedding::normalized(vec![1.0, 0.0]),
            [ChunkRef {
                doc_id: "d".into(),
                index: 1,
            }],
        )
    }

    pub(crate) fn triple(s: &str, p: &str, o: &str) -> Triple {
        Triple {
            subject: format!("T/{s}"),
            predicate: p.into(),
            object: format!("T/{o}"),
            chunk_ref: ChunkRef {
                doc_id: "d".into(),
                index: 1,
            },
            confidence: 1.0,
        }
    }

    pub(crate) fn two_triangles() -> KnowledgeGraph {
        let names = ["a", "b", "c", "d", "e", "f"];
        let edges = [("a", "b"), ("b", "c"), ("c", "a"), ("d", "e"), ("e", "f"), ("f", "d"), ("c", "d")];
        KnowledgeGraph::new(
            names.iter().map(|n| entity(n)).collect(),
            edges.iter().map(|(s, o)| triple(s, "links", o)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn dangling_triples_are_rejected() {
        let err = KnowledgeGraph::new(vec![entity("a")], vec![triple("a", "r", "b")]).unwrap_err();
        assert!(matches!(err, Error::GraphFile(_)));
    }

    #[test]
    fn adjacency_deduplicates_parallel_triples() {
        let g = KnowledgeGraph::new(
            vec![entity("a"), entity("b")],
            vec![triple("a", "r", "b"), triple("b", "s", "a")],
        )
        .unwrap();
        assert_eq!(g.neighbors("T/a").unwrap().len(), 1);
        let p = g.projection();
        assert_eq!(p.adjacency(0, 1), 2.0);
    }

    #[test]
    fn modularity_examples() {
        let g = KnowledgeGraph::new(
            ["a", "b", "c", "d"].iter().map(|n| entity(n)).collect(),
            vec![triple("a", "r", "b"), triple("c", "r", "d")],
        )
        .unwrap();
        let split: BTreeMap<String, usize> =
            [("T/a", 0), ("T/b", 0), ("T/c", 1), ("T/d", 1)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert!((g.modularity(&split).unwrap() - 0.5).abs() < 1e-15);
        let one: BTreeMap<String, usize> = split.keys().map(|k| (k.clone(), 7)).collect();
        assert!(g.modularity(&one).unwrap().abs() < 1e-15);
        let mut partial = split.clone();
        partial.remove("T/c");
        assert!(matches!(g.modularity(&partial), Err(Error::IncompletePartition(id)) if id == "T/c"));
        let edgeless = KnowledgeGraph::new(vec![entity("a"), entity("b")], vec![]).unwrap();
        let any: BTreeMap<String, usize> = [("T/a".to_string(), 0), ("T/b".to_string(), 1)].into();
        assert_eq!(edgeless.modularity(&any).unwrap(), 0.0);
    }

    #[test]
    fn detection_finds_the_triangles() {
        let mut g = two_triangles();
        g.detect_communities(&LeidenConfig::default());
        let last = g.partitions().last().unwrap();
        let a = last.assignment["T/a"];
        let d = last.assignment["T/d"];
        assert_ne!(a, d);
        for (id, c) in &last.assignment {
            let expected = if ["T/a", "T/b", "T/c"].contains(&id.as_str()) { a } else { d };
            assert_eq!(*c, expected);
        }
        for p in g.partitions() {
            assert!((p.modularity - g.modularity(&p.assignment).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn summaries_are_cached() {
        let mut g = two_triangles();
        g.detect_communities(&LeidenConfig::default());
        let gen = Counting::new(MockGenerator::new(42));
        let embed = MockEmbedder::new(42);
        let first = g.summarize_communities(&gen, &embed).unwrap();
        assert!(first > 0);
        assert_eq!(gen.calls(), first);
        assert!(g.communities().iter().all(|c| c.summary.is_some() && c.summary_embedding.is_some()));
        g.detect_communities(&LeidenConfig::default());
        assert_eq!(g.summarize_communities(&gen, &embed).unwrap(), 0);
        assert_eq!(gen.calls(), first);
    }
}

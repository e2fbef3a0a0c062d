use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{KnowledgeGraph, Partition};
use crate::prompt::Prompt;
use crate::providers::{Embedding, GenerationProvider};
use crate::{Error, Result};

pub const SUMMARY_MAX_TOKENS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommunityId {
    pub level: usize,
    pub index: usize,
}

impl fmt::Display for CommunityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}C{}", self.level, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub id: CommunityId,
    pub members: BTreeSet<String>,
    /// Indices into the graph's triples with both endpoints in `members`.
    pub induced_edges: Vec<usize>,
    pub summary: Option<String>,
    pub summary_embedding: Option<Embedding>,
}

pub(super) fn communities_of(graph: &KnowledgeGraph, p: &Partition) -> Vec<Community> {
    let mut members: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for (id, &c) in &p.assignment {
        members.entry(c).or_default().insert(id.clone());
    }
    let mut edges: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, t) in graph.triples().iter().enumerate() {
        let (cs, co) = (p.assignment[&t.subject], p.assignment[&t.object]);
        if cs == co {
            edges.entry(cs).or_default().push(i);
        }
    }
    members
        .into_iter()
        .map(|(index, members)| Community {
            id: CommunityId {
                level: p.level,
                index,
            },
            members,
            induced_edges: edges.remove(&index).unwrap_or_default(),
            summary: None,
            summary_embedding: None,
        })
        .collect()
}

fn name_of(graph: &KnowledgeGraph, id: &str) -> String {
    graph
        .entity(id)
        .map_or_else(|| id.to_string(), |e| e.canonical_name.clone())
}

/// Relationship lines `subject -[predicate]-> object`, plus `name (type)`
/// for members without an induced edge, sorted and deduplicated.
pub fn community_serialization(c: &Community, graph: &KnowledgeGraph) -> String {
    let mut lines = BTreeSet::new();
    let mut linked = BTreeSet::new();
    for &i in &c.induced_edges {
        let t = &graph.triples()[i];
        lines.insert(format!(
            "{} -[{}]-> {}",
            name_of(graph, &t.subject),
            t.predicate,
            name_of(graph, &t.object)
        ));
        linked.insert(t.subject.as_str());
        linked.insert(t.object.as_str());
    }
    for m in &c.members {
        if !linked.contains(m.as_str()) {
            let label = graph.entity(m).map_or("", |e| e.type_label.as_str());
            lines.insert(format!("{} ({label})", name_of(graph, m)));
        }
    }
    lines.into_iter().collect::<Vec<_>>().join("\n")
}

pub(super) fn cache_key(serialization: &str) -> String {
    hex::encode(Sha256::digest(serialization.as_bytes()))
}

pub(super) fn generate_summary(id: CommunityId, serialization: &str, gen: &dyn GenerationProvider) -> Result<String> {
    let prompt = Prompt::new("summarize_community")
        .field(
            "instructions",
            "summarize the relationships below as one paragraph describing the process they form",
        )
        .body(serialization)
        .render();
    let summary = gen
        .generate(&prompt, SUMMARY_MAX_TOKENS)
        .map_err(|e| Error::provider(format!("summarizing community {id}"), e))?;
    if summary.trim().is_empty() {
        return Err(Error::Contract(format!("empty summary for community {id}")));
    }
    Ok(summary)
}

/// Summary of one community, served from the graph's cache when the
/// serialization is unchanged. The embedding is left as is.
pub fn summarize_community(
    c: &Community,
    graph: &KnowledgeGraph,
    gen: &dyn GenerationProvider,
) -> Result<Community> {
    let text = community_serialization(c, graph);
    let summary = match graph.summary_cache().get(&cache_key(&text)) {
        Some(hit) => hit.summary.clone(),
        None => generate_summary(c.id, &text, gen)?,
    };
    Ok(Community {
        summary: Some(summary),
        ..c.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{entity, triple, two_triangles};
    use crate::graph::LeidenConfig;
    use crate::providers::mock::{Counting, Failing, MockEmbedder, MockGenerator};

    #[test]
    fn singleton_summary_uses_name_and_type() {
        let mut g = KnowledgeGraph::new(vec![entity("lone")], vec![]).unwrap();
        g.detect_communities(&LeidenConfig::default());
        let c = &g.communities()[0];
        assert_eq!(community_serialization(c, &g), "lone (T)");
        let s = summarize_community(c, &g, &MockGenerator::new(42)).unwrap();
        assert!(s.summary.unwrap().ends_with("] lone (T)"));
    }

    #[test]
    fn mock_summary_is_template_over_serialization() {
        let mut g = two_triangles();
        g.detect_communities(&LeidenConfig::default());
        let c = g.communities().iter().find(|c| c.members.contains("T/a")).unwrap();
        let text = community_serialization(c, &g);
        assert!(text.starts_with("a -[links]-> b\n"));
        let s = summarize_community(c, &g, &MockGenerator::new(42)).unwrap().summary.unwrap();
        assert!(s.starts_with("[summarize_community#"));
        assert!(s.ends_with(&text.split_whitespace().collect::<Vec<_>>().join(" ")));
    }

    #[test]
    fn cache_hit_makes_no_calls() {
        let mut g = two_triangles();
        g.detect_communities(&LeidenConfig::default());
        g.summarize_communities(&MockGenerator::new(42), &MockEmbedder::new(42)).unwrap();
        let gen = Counting::new(Failing);
        for c in g.communities() {
            summarize_community(c, &g, &gen).unwrap();
        }
        assert_eq!(gen.calls(), 0);
    }

    #[test]
    fn failure_names_the_community() {
        let mut g = KnowledgeGraph::new(vec![entity("x"), entity("y")], vec![triple("x", "r", "y")]).unwrap();
        g.detect_communities(&LeidenConfig::default());
        let err = summarize_community(&g.communities()[0], &g, &Failing).unwrap_err();
        assert!(err.to_string().contains("L0C0"), "{err}");
    }

    #[test]
    fn induced_edges_stay_inside() {
        let mut g = two_triangles();
        g.detect_communities(&LeidenConfig::default());
        for c in g.communities() {
            assert!(!c.members.is_empty());
            for &i in &c.induced_edges {
                let t = &g.triples()[i];
                assert!(c.members.contains(&t.subject) && c.members.contains(&t.object));
            }
        }
    }
}

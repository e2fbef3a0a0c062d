//! Query answering over a summarized knowledge graph.
//!
//! A query is embedded and every community at the queried levels is scored
//! by cosine against its summary embedding. The top-K communities form the
//! query subgraph; seed entities are linked by embedding similarity, and
//! directed, cycle-free paths from the seeds inside the subgraph are handed
//! to the generator together with the query.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::graph::{Community, CommunityId, KnowledgeGraph};
use crate::prompt::Prompt;
use crate::providers::{Embedding, EmbeddingProvider, GenerationProvider};
use crate::{Error, Result};

pub const ANSWER_MAX_TOKENS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieveConfig {
    pub top_k: usize,
    pub max_hops: usize,
    pub max_paths: usize,
    pub link_threshold: f64,
    pub link_top_n: usize,
    /// Rank communities of every level instead of level 0 only.
    pub all_levels: bool,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        RetrieveConfig {
            top_k: 5,
            max_hops: 3,
            max_paths: 20,
            link_threshold: 0.5,
            link_top_n: 5,
            all_levels: false,
        }
    }
}

impl RetrieveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("retrieve.top_k must be >= 1".into()));
        }
        if self.max_hops == 0 {
            return Err(Error::Config("retrieve.max_hops must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.link_threshold) {
            return Err(Error::Config("retrieve.link_threshold must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityScore {
    pub community: CommunityId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Subgraph {
    pub nodes: BTreeSet<String>,
    /// Triple indices.
    pub edges: BTreeSet<usize>,
}

/// `entities[0] -predicates[0]-> entities[1] ...`, following stored triples.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Path {
    pub entities: Vec<String>,
    pub predicates: Vec<String>,
    pub triples: Vec<usize>,
}

impl Path {
    pub fn hops(&self) -> usize {
        self.predicates.len()
    }

    fn key(&self) -> (usize, &[String], &[String], &[usize]) {
        (self.hops(), &self.entities, &self.predicates, &self.triples)
    }

    /// `name -[predicate]-> name ...` using canonical entity names.
    pub fn render(&self, graph: &KnowledgeGraph) -> String {
        let name = |id: &String| graph.entity(id).map_or(id.as_str(), |e| e.canonical_name.as_str()).to_string();
        let mut out = name(&self.entities[0]);
        for (p, e) in self.predicates.iter().zip(&self.entities[1..]) {
            out.push_str(&format!(" -[{p}]-> {}", name(e)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub answer: String,
    /// Set when no reasoning path supports the answer.
    pub low_evidence: bool,
    pub ranked_communities: Vec<CommunityScore>,
    pub selected_communities: Vec<CommunityId>,
    pub subgraph: Subgraph,
    pub linked_entities: Vec<String>,
    pub seeds: Vec<String>,
    pub paths: Vec<Path>,
}

/// Scores communities against a query embedding, best first, ties by id.
pub fn rank_by_embedding(query: &Embedding, communities: &[&Community]) -> Result<Vec<CommunityScore>> {
    let mut scores = communities
        .iter()
        .map(|c| {
            let e = c
                .summary_embedding
                .as_ref()
                .ok_or_else(|| Error::MissingSummary(c.id.to_string()))?;
            Ok(CommunityScore {
                community: c.id,
                score: query.cosine(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.community.cmp(&b.community)));
    Ok(scores)
}

pub fn rank_communities(
    query: &str,
    graph: &KnowledgeGraph,
    embed: &dyn EmbeddingProvider,
    level: Option<usize>,
) -> Result<Vec<CommunityScore>> {
    let q = embed
        .embed_text(query)
        .map_err(|e| Error::provider("embedding query", e))?;
    rank_by_embedding(&q, &graph.communities_at(level))
}

/// Union of members and induced edges.
pub fn build_subgraph(topk: &[&Community]) -> Subgraph {
    let mut sg = Subgraph::default();
    for c in topk {
        sg.nodes.extend(c.members.iter().cloned());
        sg.edges.extend(c.induced_edges.iter().copied());
    }
    sg
}

/// The first `k` ranked communities; `k` beyond the ranking is clamped.
pub fn select_top<'g>(
    graph: &'g KnowledgeGraph,
    ranked: &[CommunityScore],
    k: usize,
) -> Result<Vec<&'g Community>> {
    if k == 0 {
        return Err(Error::InvalidArgument("top-K must be >= 1".into()));
    }
    if k > ranked.len() {
        warn!("top-K {k} exceeds {} ranked communities; clamping", ranked.len());
    }
    ranked
        .iter()
        .take(k)
        .map(|s| {
            graph
                .community(s.community)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown community {}", s.community)))
        })
        .collect()
}

/// Breadth-first enumeration of directed simple paths of 1..=`max_hops`
/// hops that start at a seed and use only subgraph edges. Paths that differ
/// only in which parallel triple backs a hop are reported once. Paths are ordered
/// by hop count, then entity ids, then predicates, and cut at `max_paths`.
pub fn extract_paths(
    graph: &KnowledgeGraph,
    subgraph: &Subgraph,
    seeds: &[String],
    max_hops: usize,
    max_paths: usize,
) -> Vec<Path> {
    let mut starts: Vec<&String> = Vec::new();
    for s in seeds {
        if subgraph.nodes.contains(s) {
            starts.push(s);
        } else {
            warn!("seed {s:?} is outside the query subgraph; dropped");
        }
    }
    starts.sort();
    starts.dedup();

    let mut outgoing: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &subgraph.edges {
        let t = &graph.triples()[i];
        if subgraph.nodes.contains(&t.subject) && subgraph.nodes.contains(&t.object) {
            outgoing.entry(t.subject.as_str()).or_default().push(i);
        }
    }

    let mut out: Vec<Path> = Vec::new();
    let mut frontier: Vec<Path> = starts
        .into_iter()
        .map(|s| Path {
            entities: vec![s.clone()],
            predicates: Vec::new(),
            triples: Vec::new(),
        })
        .collect();

    for _ in 0..max_hops {
        let need = max_paths.saturating_sub(out.len());
        if need == 0 || frontier.is_empty() {
            break;
        }
        let mut next: Vec<Path> = Vec::new();
        let mut i = 0;
        // Extensions of a smaller entity prefix always sort first, so whole
        // prefix groups can be processed in order until enough are found.
        while i < frontier.len() && next.len() < need {
            let group_end = i + frontier[i..]
                .iter()
                .take_while(|p| p.entities == frontier[i].entities)
                .count();
            for p in &frontier[i..group_end] {
                let last = p.entities.last().expect("non-empty path");
                // Parallel triples with the same predicate give one hop, via
                // the lowest triple index.
                let mut hops: BTreeMap<(&str, &str), usize> = BTreeMap::new();
                for &ti in outgoing.get(last.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                    let t = &graph.triples()[ti];
                    if !p.entities.contains(&t.object) {
                        hops.entry((t.object.as_str(), t.predicate.as_str())).or_insert(ti);
                    }
                }
                for ((object, predicate), ti) in hops {
                    let mut q = p.clone();
                    q.entities.push(object.to_string());
                    q.predicates.push(predicate.to_string());
                    q.triples.push(ti);
                    next.push(q);
                }
            }
            i = group_end;
        }
        next.sort_by(|a, b| a.key().cmp(&b.key()));
        if next.len() >= need {
            out.extend(next.into_iter().take(need));
            break;
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Entities whose embedding has cosine ≥ `threshold` with the query,
/// best first (ties by id), at most `top_n`.
pub fn link_by_embedding(query: &Embedding, graph: &KnowledgeGraph, threshold: f64, top_n: usize) -> Vec<String> {
    let mut scored: Vec<(f64, &str)> = graph
        .entities()
        .map(|e| (query.cosine(&e.embedding), e.id.as_str()))
        .filter(|(s, _)| *s >= threshold)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(top_n).map(|(_, id)| id.to_string()).collect()
}

pub fn query_entity_linking(
    query: &str,
    graph: &KnowledgeGraph,
    embed: &dyn EmbeddingProvider,
    threshold: f64,
    top_n: usize,
) -> Result<Vec<String>> {
    let q = embed
        .embed_text(query)
        .map_err(|e| Error::provider("embedding query", e))?;
    Ok(link_by_embedding(&q, graph, threshold, top_n))
}

pub fn answer_prompt(query: &str, paths: &[Path], graph: &KnowledgeGraph) -> String {
    let mut body = format!("Question: {query}\n");
    if !paths.is_empty() {
        body.push_str("Paths:\n");
        for p in paths {
            body.push_str(&p.render(graph));
            body.push('\n');
        }
    }
    Prompt::new("answer")
        .field(
            "instructions",
            "answer the question using the knowledge-graph paths; say so when they are insufficient",
        )
        .body(body)
        .render()
}

pub fn answer(query: &str, paths: &[Path], graph: &KnowledgeGraph, gen: &dyn GenerationProvider) -> Result<String> {
    gen.generate(&answer_prompt(query, paths, graph), ANSWER_MAX_TOKENS)
        .map_err(|e| Error::provider("generating answer", e))
}

/// Runs the full query pipeline.
pub fn query(
    graph: &KnowledgeGraph,
    query_text: &str,
    embed: &dyn EmbeddingProvider,
    gen: &dyn GenerationProvider,
    cfg: &RetrieveConfig,
) -> Result<QueryResult> {
    cfg.validate()?;
    if query_text.trim().is_empty() {
        return Err(Error::InvalidArgument("empty query".into()));
    }
    let q = embed
        .embed_text(query_text)
        .map_err(|e| Error::provider("embedding query", e))?;
    let level = if cfg.all_levels { None } else { Some(0) };
    let ranked = rank_by_embedding(&q, &graph.communities_at(level))?;
    let top = select_top(graph, &ranked, cfg.top_k)?;
    let subgraph = build_subgraph(&top);
    let linked = link_by_embedding(&q, graph, cfg.link_threshold, cfg.link_top_n);
    let seeds: Vec<String> = linked.iter().filter(|s| subgraph.nodes.contains(*s)).cloned().collect();
    let paths = extract_paths(graph, &subgraph, &seeds, cfg.max_hops, cfg.max_paths);
    let answer = answer(query_text, &paths, graph, gen)?;
    Ok(QueryResult {
        query: query_text.to_string(),
        answer,
        low_evidence: paths.is_empty(),
        selected_communities: top.iter().map(|c| c.id).collect(),
        ranked_communities: ranked,
        subgraph,
        linked_entities: linked,
        seeds,
        paths,
    })
}

/// Checks each hop of `path` against the stored triples.
pub fn path_is_valid(graph: &KnowledgeGraph, path: &Path) -> bool {
    path.entities.len() == path.predicates.len() + 1
        && path.triples.len() == path.predicates.len()
        && path.triples.iter().enumerate().all(|(i, &ti)| {
            graph.triples().get(ti).is_some_and(|t| {
                t.subject == path.entities[i] && t.object == path.entities[i + 1] && t.predicate == path.predicates[i]
            })
        })
        && path.entities.iter().collect::<BTreeSet<_>>().len() == path.entities.len()
}

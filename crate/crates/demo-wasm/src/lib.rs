//! Browser bindings for three pieces of the engine: sliding-window chunking,
//! community detection on a pasted edge list, and the entity-merge test.
//!
//! Each export takes plain values and returns a JSON string; the logic lives
//! in ordinary functions so it is testable off the browser.

use std::collections::BTreeMap;

use graphrag_core::chunking::{tokenize, window_spans};
use graphrag_core::graph::leiden::leiden;
use graphrag_core::graph::{LeidenConfig, WeightedGraph};
use graphrag_core::kg_extract::{levenshtein, normalize_name, string_similarity, DedupConfig};
use graphrag_core::providers::Embedding;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

pub fn chunk(text: &str, window: usize, stride: usize) -> Result<Vec<Window>, String> {
    let stream = tokenize(text);
    let spans = window_spans(stream.len(), window, stride).map_err(|e| e.to_string())?;
    Ok(spans
        .into_iter()
        .map(|s| Window {
            start: s.start,
            end: s.end,
            text: stream.span_text(s.start, s.end),
        })
        .collect())
}

pub type Edge = (usize, usize, f64);

#[derive(Debug, Serialize)]
pub struct Communities {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    /// Membership and modularity per level, finest first.
    pub levels: Vec<LevelView>,
}

#[derive(Debug, Serialize)]
pub struct LevelView {
    pub membership: Vec<usize>,
    pub modularity: f64,
    pub communities: usize,
}

/// Parses `a b [weight]` lines; `#` starts a comment.
pub fn parse_edges(text: &str) -> Result<(Vec<String>, Vec<Edge>), String> {
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let weight = match parts.as_slice() {
            [_, _] => 1.0,
            [_, _, w] => w
                .parse::<f64>()
                .ok()
                .filter(|w| *w > 0.0 && w.is_finite())
                .ok_or_else(|| format!("line {}: bad weight {w:?}", n + 1))?,
            _ => return Err(format!("line {}: expected `a b [weight]`", n + 1)),
        };
        let mut id = |name: &str| {
            *index.entry(name.to_string()).or_insert_with(|| {
                nodes.push(name.to_string());
                nodes.len() - 1
            })
        };
        let (a, b) = (id(parts[0]), id(parts[1]));
        if a != b {
            edges.push((a, b, weight));
        }
    }
    Ok((nodes, edges))
}

pub fn communities(edge_list: &str, resolution: f64, seed: u64) -> Result<Communities, String> {
    let (nodes, edges) = parse_edges(edge_list)?;
    if nodes.is_empty() {
        return Err("no edges given".into());
    }
    let cfg = LeidenConfig {
        seed,
        resolution,
        ..LeidenConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let g = WeightedGraph::from_edges(nodes.len(), edges.iter().copied());
    let levels = leiden(&g, &cfg)
        .into_iter()
        .map(|l| LevelView {
            communities: l.membership.iter().max().map_or(0, |m| m + 1),
            membership: l.membership,
            modularity: l.modularity,
        })
        .collect();
    Ok(Communities { nodes, edges, levels })
}

#[derive(Debug, Serialize)]
pub struct MergeVerdict {
    pub normalized: (String, String),
    pub edit_distance: usize,
    pub string_similarity: f64,
    pub cosine: f64,
    pub passes_cosine: bool,
    pub passes_string: bool,
    pub passes_edit_distance: bool,
    pub duplicate: bool,
}

/// Applies the merge rule to two names whose embeddings have the given cosine.
pub fn merge_test(a: &str, b: &str, cosine: f64, cfg: &DedupConfig) -> Result<MergeVerdict, String> {
    if !(-1.0..=1.0).contains(&cosine) {
        return Err("cosine must lie in [-1, 1]".into());
    }
    cfg.validate().map_err(|e| e.to_string())?;
    // Two unit vectors at the requested angle.
    let ea = Embedding::new(vec![1.0, 0.0]);
    let eb = Embedding::new(vec![cosine, (1.0 - cosine * cosine).max(0.0).sqrt()]);
    let (na, nb) = (normalize_name(a), normalize_name(b));
    let d = levenshtein(&na, &nb);
    let sim = string_similarity(a, b);
    Ok(MergeVerdict {
        edit_distance: d,
        string_similarity: sim,
        cosine,
        passes_cosine: ea.cosine(&eb) >= cfg.tau_sim,
        passes_string: sim >= cfg.tau_str,
        passes_edit_distance: d <= cfg.max_edit_distance,
        duplicate: cfg.is_duplicate(a, &ea, b, &eb),
        normalized: (na, nb),
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = chunkWindows)]
pub fn chunk_windows(text: &str, window: usize, stride: usize) -> Result<String, JsValue> {
    to_json(chunk(text, window, stride))
}

#[wasm_bindgen(js_name = detectCommunities)]
pub fn detect_communities(edge_list: &str, resolution: f64, seed: u64) -> Result<String, JsValue> {
    to_json(communities(edge_list, resolution, seed))
}

#[wasm_bindgen(js_name = mergeTest)]
pub fn merge_test_js(
    a: &str,
    b: &str,
    cosine: f64,
    tau_sim: f64,
    tau_str: f64,
    max_edit_distance: usize,
) -> Result<String, JsValue> {
    let cfg = DedupConfig {
        tau_sim,
        tau_str,
        max_edit_distance,
    };
    to_json(merge_test(a, b, cosine, &cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_round_trip() {
        let w = chunk("one two three four five", 2, 2).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!((w[2].start, w[2].end), (4, 5));
        assert!(chunk("x", 2, 3).is_err());
    }

    #[test]
    fn two_triangles() {
        let r = communities("a b\nb c\na c\nc d\nd e\ne f\nd f\n", 1.0, 1).unwrap();
        let m = &r.levels.last().unwrap().membership;
        assert_eq!(r.nodes, ["a", "b", "c", "d", "e", "f"]);
        assert!(m[0] == m[2] && m[3] == m[5] && m[0] != m[3]);
        assert!(communities("a", 1.0, 1).is_err());
        assert!(communities("a b -1", 1.0, 1).is_err());
    }

    #[test]
    fn merge_rule_needs_every_threshold() {
        let cfg = DedupConfig::default();
        assert!(merge_test("Methanol", "methanol ", 0.95, &cfg).unwrap().duplicate);
        assert!(!merge_test("methanol", "methanols", 0.5, &cfg).unwrap().duplicate);
        let v = merge_test("methanol", "chlorine", 1.0, &cfg).unwrap();
        assert!(v.passes_cosine && !v.passes_string && !v.duplicate);
    }
}

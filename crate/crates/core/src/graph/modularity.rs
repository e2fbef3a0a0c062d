//! Undirected weighted graphs over dense node indices and their modularity.

use serde::{Deserialize, Serialize};

/// Undirected weighted graph with optional self-loops.
///
/// A self-loop of weight `w` contributes `2w` to its node's degree, so
/// aggregating communities into single nodes preserves modularity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightedGraph {
    neighbors: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    degree: Vec<f64>,
    total_weight: f64,
}

impl WeightedGraph {
    /// Builds a graph on `n` nodes; parallel edges add their weights.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut pair: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
        for (u, v, w) in edges {
            assert!(u < n && v < n, "edge ({u}, {v}) outside {n} nodes");
            *pair.entry((u.min(v), u.max(v))).or_insert(0.0) += w;
        }
        let mut g = WeightedGraph {
            neighbors: vec![Vec::new(); n],
            self_loops: vec![0.0; n],
            degree: vec![0.0; n],
            total_weight: 0.0,
        };
        for ((u, v), w) in pair {
            g.total_weight += w;
            if u == v {
                g.self_loops[u] += w;
                g.degree[u] += 2.0 * w;
            } else {
                g.neighbors[u].push((v, w));
                g.neighbors[v].push((u, w));
                g.degree[u] += w;
                g.degree[v] += w;
            }
        }
        g
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Sum of edge weights, each edge counted once (m).
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn degree(&self, v: usize) -> f64 {
        self.degree[v]
    }

    pub fn self_loop(&self, v: usize) -> f64 {
        self.self_loops[v]
    }

    /// Neighbors other than `v` itself, ascending by index.
    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.neighbors[v]
    }

    /// `A_uv` with the self-loop convention `A_vv = 2 w_vv`.
    pub fn adjacency(&self, u: usize, v: usize) -> f64 {
        if u == v {
            return 2.0 * self.self_loops[u];
        }
        self.neighbors[u]
            .iter()
            .find(|&&(x, _)| x == v)
            .map_or(0.0, |&(_, w)| w)
    }

    /// Edges `(u, v, w)` with `u <= v`, ordered.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for u in 0..self.node_count() {
            if self.self_loops[u] > 0.0 {
                out.push((u, u, self.self_loops[u]));
            }
            out.extend(self.neighbors[u].iter().filter(|&&(v, _)| v > u).map(|&(v, w)| (u, v, w)));
        }
        out.sort_by_key(|e| (e.0, e.1));
        out
    }
}

/// Modularity with resolution `gamma`:
/// `Q = Σ_c [ in_c / 2m − γ (K_c / 2m)² ]`, where `in_c` is the sum of `A_ij`
/// over ordered pairs inside `c` and `K_c` the total degree of `c`.
/// An edgeless graph has `Q = 0`.
pub fn modularity_with_resolution(g: &WeightedGraph, membership: &[usize], gamma: f64) -> f64 {
    assert_eq!(membership.len(), g.node_count(), "membership length");
    let m = g.total_weight();
    if m == 0.0 {
        return 0.0;
    }
    let k = membership.iter().copied().max().map_or(0, |x| x + 1);
    let mut internal = vec![0.0; k];
    let mut total = vec![0.0; k];
    for u in 0..g.node_count() {
        let cu = membership[u];
        total[cu] += g.degree(u);
        internal[cu] += 2.0 * g.self_loop(u);
        for &(v, w) in g.neighbors(u) {
            if membership[v] == cu {
                internal[cu] += w;
            }
        }
    }
    let two_m = 2.0 * m;
    internal
        .iter()
        .zip(&total)
        .map(|(i, t)| i / two_m - gamma * (t / two_m) * (t / two_m))
        .sum()
}

pub fn modularity(g: &WeightedGraph, membership: &[usize]) -> f64 {
    modularity_with_resolution(g, membership, 1.0)
}

/// Relabels communities by first appearance in node order.
pub fn canonical_labels(membership: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    membership
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// One partition level over the dense node indices of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub membership: Vec<usize>,
    pub modularity: f64,
}

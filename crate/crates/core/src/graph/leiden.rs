//! Leiden community detection for modularity.
//!
//! Each iteration runs the three Leiden phases on the current (aggregate)
//! graph:
//!
//! 1. Fast local moving: nodes are visited from a queue in seeded random
//!    order and moved to the neighboring (or an empty) community with the
//!    largest strictly positive gain. Ties keep the current community, then
//!    prefer the lowest community id. Neighbors of a moved node that left the
//!    node's new community are re-queued.
//! 2. Refinement: inside every community, nodes start as singletons and each
//!    well-connected singleton joins a well-connected sub-community with
//!    non-negative gain, chosen with probability `∝ exp(ΔQ / θ)`.
//! 3. Aggregation over the refined partition, with the unrefined partition
//!    as the starting point for the next iteration.
//!
//! The partition of the original nodes after each iteration is one level.
//! Levels are recorded only when they differ from the previous one; the run
//! stops when local moving leaves every node on its own, after `max_levels`
//! recorded levels, or when aggregation no longer shrinks the graph.
//!
//! Local moving can settle in a local optimum that no single improving move
//! escapes (a path split into pairs, for instance). The procedure is
//! therefore repeated `restarts` times from independent seeded streams, and
//! the last level of each run is polished before the best run is kept:
//!
//! - Kernighan–Lin passes: sequences of best single-node moves, negative ones
//!   included, each node moved at most once per pass, keeping the best prefix.
//! - Perturbation search: a node is moved to an adjacent (or empty)
//!   community, its neighborhood is re-settled greedily, and the result is
//!   kept when modularity rises. Skipped on graphs above 5000 nodes.
//! - Communities that are internally disconnected are split into their
//!   components, which never lowers modularity.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::modularity::{canonical_labels, modularity, modularity_with_resolution, Level, WeightedGraph};

/// Refinement randomness temperature.
pub const THETA: f64 = 0.01;

const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeidenConfig {
    pub seed: u64,
    pub max_levels: usize,
    pub resolution: f64,
    pub restarts: usize,
}

impl Default for LeidenConfig {
    fn default() -> Self {
        LeidenConfig {
            seed: 42,
            max_levels: 3,
            resolution: 1.0,
            restarts: 8,
        }
    }
}

impl LeidenConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(format!("community.{m}")));
        if self.max_levels == 0 {
            return bad("max_levels must be >= 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1");
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return bad("resolution must be a positive number");
        }
        Ok(())
    }
}

/// Per-community degree totals and the shared constants of one phase.
struct Totals {
    tot: Vec<f64>,
    size: Vec<usize>,
    two_m: f64,
    gamma: f64,
}

impl Totals {
    fn new(g: &WeightedGraph, membership: &[usize], gamma: f64) -> Self {
        let n = g.node_count();
        let mut tot = vec![0.0; n];
        let mut size = vec![0; n];
        for v in 0..n {
            tot[membership[v]] += g.degree(v);
            size[membership[v]] += 1;
        }
        Totals {
            tot,
            size,
            two_m: 2.0 * g.total_weight(),
            gamma,
        }
    }

    /// Gain (up to the positive factor 1/m) of placing `v`, currently
    /// detached, into a community with link weight `w_in` and total `tot`.
    fn gain(&self, w_in: f64, k_v: f64, tot: f64) -> f64 {
        w_in - self.gamma * k_v * tot / self.two_m
    }
}

/// Link weights from one node to each adjacent community.
struct Links {
    weight: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<usize>,
}

impl Links {
    fn new(n: usize) -> Self {
        Links {
            weight: vec![0.0; n],
            seen: vec![false; n],
            touched: Vec::new(),
        }
    }

    /// Recomputes the links of `v`, ignoring its self-loop.
    fn load(&mut self, g: &WeightedGraph, membership: &[usize], v: usize) {
        for &c in &self.touched {
            self.weight[c] = 0.0;
            self.seen[c] = false;
        }
        self.touched.clear();
        for &(u, w) in g.neighbors(v) {
            let c = membership[u];
            if !self.seen[c] {
                self.seen[c] = true;
                self.touched.push(c);
            }
            self.weight[c] += w;
        }
    }
}

fn move_nodes_fast(g: &WeightedGraph, membership: &mut [usize], gamma: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = g.node_count();
    if g.total_weight() == 0.0 {
        return false;
    }
    let mut t = Totals::new(g, membership, gamma);
    let mut empty: BTreeSet<usize> = (0..n).filter(|&c| t.size[c] == 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into_iter().collect();
    let mut queued = vec![true; n];
    let mut links = Links::new(n);
    let mut moved_any = false;

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let cur = membership[v];
        let k_v = g.degree(v);
        links.load(g, membership, v);

        t.tot[cur] -= k_v;
        let stay = t.gain(links.weight[cur], k_v, t.tot[cur]);
        let mut best = cur;
        let mut best_gain = stay;
        let mut candidates: Vec<usize> = links.touched.iter().copied().filter(|&c| c != cur).collect();
        if t.size[cur] > 1 {
            if let Some(&e) = empty.iter().next() {
                candidates.push(e);
            }
        }
        candidates.sort_unstable();
        for c in candidates {
            let gain = t.gain(links.weight[c], k_v, t.tot[c]);
            if gain > best_gain + GAIN_EPS {
                best = c;
                best_gain = gain;
            }
        }
        t.tot[best] += k_v;

        if best != cur {
            moved_any = true;
            t.size[cur] -= 1;
            if t.size[cur] == 0 {
                empty.insert(cur);
            }
            if t.size[best] == 0 {
                empty.remove(&best);
            }
            t.size[best] += 1;
            membership[v] = best;
            for &(u, _) in g.neighbors(v) {
                if !queued[u] && membership[u] != best {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    moved_any
}

/// Refined partition: each community of `membership` split into
/// well-connected sub-communities.
fn refine(g: &WeightedGraph, membership: &[usize], gamma: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.node_count();
    let mut refined: Vec<usize> = (0..n).collect();
    if g.total_weight() == 0.0 {
        return refined;
    }
    let two_m = 2.0 * g.total_weight();
    let m = g.total_weight();

    let mut comm_tot = vec![0.0; n];
    for v in 0..n {
        comm_tot[membership[v]] += g.degree(v);
    }
    // Weight from each node to the rest of its own community.
    let mut w_to_comm = vec![0.0; n];
    for v in 0..n {
        w_to_comm[v] = g
            .neighbors(v)
            .iter()
            .filter(|&&(u, _)| membership[u] == membership[v])
            .map(|&(_, w)| w)
            .sum();
    }

    // Per refined community: total degree, and link weight to the rest of
    // its parent community.
    let mut r_tot: Vec<f64> = (0..n).map(|v| g.degree(v)).collect();
    let mut r_ext: Vec<f64> = w_to_comm.clone();
    let mut singleton = vec![true; n];

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut links = Links::new(n);

    for v in order {
        if !singleton[v] {
            continue;
        }
        let s = membership[v];
        let k_v = g.degree(v);
        if w_to_comm[v] < gamma * k_v * (comm_tot[s] - k_v) / two_m {
            continue;
        }
        links.load(g, &refined, v);

        let mut options: Vec<(usize, f64)> = vec![(refined[v], 0.0)];
        let mut cands: Vec<usize> = links
            .touched
            .iter()
            .copied()
            .filter(|&c| c != refined[v])
            .collect();
        cands.sort_unstable();
        for c in cands {
            // Only sub-communities of the same parent are reachable.
            let rep_in_parent = g
                .neighbors(v)
                .iter()
                .any(|&(u, _)| refined[u] == c && membership[u] == s);
            if !rep_in_parent {
                continue;
            }
            if r_ext[c] < gamma * r_tot[c] * (comm_tot[s] - r_tot[c]) / two_m {
                continue;
            }
            let dq = (links.weight[c] - gamma * k_v * r_tot[c] / two_m) / m;
            if dq >= 0.0 {
                options.push((c, dq));
            }
        }

        let top = options.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = options.iter().map(|o| ((o.1 - top) / THETA).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = options[options.len() - 1].0;
        for (o, w) in options.iter().zip(&weights) {
            if pick < *w {
                chosen = o.0;
                break;
            }
            pick -= w;
        }

        let old = refined[v];
        if chosen == old {
            continue;
        }
        // v leaves its singleton and joins `chosen`.
        let w_v_c = links.weight[chosen];
        r_tot[chosen] += k_v;
        r_ext[chosen] += w_to_comm[v] - 2.0 * w_v_c;
        r_tot[old] = 0.0;
        r_ext[old] = 0.0;
        refined[v] = chosen;
        singleton[v] = false;
        // Refined labels start as node ids, so `chosen` names its founder.
        singleton[chosen] = false;
    }
    refined
}

/// Collapses each community of `membership` into one node.
fn aggregate(g: &WeightedGraph, membership: &[usize]) -> (WeightedGraph, Vec<usize>) {
    let labels = canonical_labels(membership);
    let k = labels.iter().copied().max().map_or(0, |x| x + 1);
    let edges = g
        .edges()
        .into_iter()
        .map(|(u, v, w)| (labels[u], labels[v], w))
        .collect::<Vec<_>>();
    (WeightedGraph::from_edges(k, edges), labels)
}

/// Runs Leiden and returns the distinct levels of the best run, finest
/// first. Every level's membership is canonically labelled over the original
/// nodes.
pub fn leiden(g: &WeightedGraph, cfg: &LeidenConfig) -> Vec<Level> {
    let q = |levels: &[Level]| levels.last().map_or(f64::NEG_INFINITY, |l| l.modularity);
    let mut best: Vec<Level> = Vec::new();
    for stream in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream as u64);
        let mut run = leiden_run(g, cfg, &mut rng);
        polish_last(g, &mut run, cfg.resolution);
        if best.is_empty() || q(&run) > q(&best) + GAIN_EPS {
            best = run;
        }
    }
    best
}

/// Replaces the last level with its polished, component-split version.
fn polish_last(g: &WeightedGraph, levels: &mut [Level], gamma: f64) {
    let Some(last) = levels.last_mut() else { return };
    let mut membership = last.membership.clone();
    polish(g, &mut membership, gamma);
    perturb(g, &mut membership, gamma);
    split_disconnected(g, &mut membership);
    let membership = canonical_labels(&membership);
    if membership != last.membership {
        last.modularity = modularity(g, &membership);
        last.membership = membership;
    }
}

/// Kernighan–Lin refinement of `membership` on `g`.
fn polish(g: &WeightedGraph, membership: &mut [usize], gamma: f64) {
    let n = g.node_count();
    let m = g.total_weight();
    if m == 0.0 || n < 2 {
        return;
    }
    loop {
        let mut work = membership.to_vec();
        let mut t = Totals::new(g, &work, gamma);
        let mut links = Links::new(n);
        let mut locked = vec![false; n];
        let mut q = 0.0;
        let mut best_q = 0.0;
        let mut best: Option<Vec<usize>> = None;
        for _ in 0..n {
            let free = (0..n).find(|&c| t.size[c] == 0);
            let mut pick: Option<(f64, usize, usize)> = None;
            for v in (0..n).filter(|&v| !locked[v]) {
                let cur = work[v];
                let k_v = g.degree(v);
                links.load(g, &work, v);
                let stay = t.gain(links.weight[cur], k_v, t.tot[cur] - k_v);
                let mut cands: Vec<usize> = links.touched.iter().copied().filter(|&c| c != cur).collect();
                if t.size[cur] > 1 {
                    cands.extend(free);
                }
                for c in cands {
                    let delta = (t.gain(links.weight[c], k_v, t.tot[c]) - stay) / m;
                    if pick.is_none_or(|(d, pv, pc)| {
                        delta > d + GAIN_EPS || (delta > d - GAIN_EPS && (v, c) < (pv, pc))
                    }) {
                        pick = Some((delta, v, c));
                    }
                }
            }
            let Some((delta, v, c)) = pick else { break };
            let cur = work[v];
            let k_v = g.degree(v);
            t.tot[cur] -= k_v;
            t.size[cur] -= 1;
            t.tot[c] += k_v;
            t.size[c] += 1;
            work[v] = c;
            locked[v] = true;
            q += delta;
            if q > best_q + GAIN_EPS {
                best_q = q;
                best = Some(work.clone());
            }
        }
        match best {
            Some(b) => membership.copy_from_slice(&b),
            None => return,
        }
    }
}

/// Graphs larger than this skip the perturbation search.
const PERTURB_MAX_NODES: usize = 5_000;
const PERTURB_MAX_ROUNDS: usize = 8;

/// Best-improvement moves of queued nodes until none improves.
fn settle(g: &WeightedGraph, membership: &mut [usize], gamma: f64, mut queue: VecDeque<usize>) {
    let n = g.node_count();
    let mut t = Totals::new(g, membership, gamma);
    let mut queued = vec![false; n];
    for &v in &queue {
        queued[v] = true;
    }
    let mut links = Links::new(n);
    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let cur = membership[v];
        let k_v = g.degree(v);
        links.load(g, membership, v);
        t.tot[cur] -= k_v;
        let mut best = cur;
        let mut best_gain = t.gain(links.weight[cur], k_v, t.tot[cur]);
        let mut cands: Vec<usize> = links.touched.iter().copied().filter(|&c| c != cur).collect();
        cands.sort_unstable();
        for c in cands {
            let gain = t.gain(links.weight[c], k_v, t.tot[c]);
            if gain > best_gain + GAIN_EPS {
                best = c;
                best_gain = gain;
            }
        }
        t.tot[best] += k_v;
        if best != cur {
            t.size[cur] -= 1;
            t.size[best] += 1;
            membership[v] = best;
            for &(u, _) in g.neighbors(v) {
                if !queued[u] {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
}

/// Iterated local search: each node is tentatively moved to every adjacent
/// community, its neighborhood is re-settled, and the result is kept when
/// modularity rises.
fn perturb(g: &WeightedGraph, membership: &mut [usize], gamma: f64) {
    let n = g.node_count();
    if g.total_weight() == 0.0 || n > PERTURB_MAX_NODES {
        return;
    }
    let mut q = modularity_with_resolution(g, membership, gamma);
    for _ in 0..PERTURB_MAX_ROUNDS {
        let mut improved = false;
        for v in 0..n {
            let mut targets: Vec<usize> = g
                .neighbors(v)
                .iter()
                .map(|&(u, _)| membership[u])
                .filter(|&c| c != membership[v])
                .collect();
            targets.sort_unstable();
            targets.dedup();
            if membership.iter().filter(|&&c| c == membership[v]).count() > 1 {
                targets.extend((0..n).find(|c| !membership.contains(c)));
            }
            for c in targets {
                let mut trial = membership.to_vec();
                trial[v] = c;
                settle(g, &mut trial, gamma, g.neighbors(v).iter().map(|&(u, _)| u).collect());
                let tq = modularity_with_resolution(g, &trial, gamma);
                if tq > q + GAIN_EPS {
                    membership.copy_from_slice(&trial);
                    q = tq;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Splits every community into its connected components.
fn split_disconnected(g: &WeightedGraph, membership: &mut [usize]) {
    let n = g.node_count();
    let mut component = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        component[start] = next;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &(v, _) in g.neighbors(u) {
                if component[v] == usize::MAX && membership[v] == membership[u] {
                    component[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    membership.copy_from_slice(&component);
}

fn leiden_run(g: &WeightedGraph, cfg: &LeidenConfig, rng: &mut ChaCha8Rng) -> Vec<Level> {
    let n = g.node_count();
    if n == 0 {
        return Vec::new();
    }
    let mut levels: Vec<Level> = Vec::new();
    let mut current = g.clone();
    // Original node -> node of `current`.
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut partition: Vec<usize> = (0..n).collect();
    let max_levels = cfg.max_levels.max(1);

    loop {
        move_nodes_fast(&current, &mut partition, cfg.resolution, rng);
        let labels = canonical_labels(&partition);
        let flat = canonical_labels(&node_of.iter().map(|&x| labels[x]).collect::<Vec<_>>());
        if levels.last().map(|l| &l.membership) != Some(&flat) {
            levels.push(Level {
                modularity: modularity(g, &flat),
                membership: flat,
            });
        }
        let community_count = labels.iter().copied().max().map_or(0, |x| x + 1);
        if community_count == current.node_count() || levels.len() >= max_levels {
            break;
        }

        let mut refined = refine(&current, &partition, cfg.resolution, rng);
        if canonical_labels(&refined) == (0..current.node_count()).collect::<Vec<_>>() {
            refined = partition.clone();
        }
        let (next, refined_labels) = aggregate(&current, &refined);
        if next.node_count() == current.node_count() {
            break;
        }
        let mut next_partition = vec![0; next.node_count()];
        for v in 0..current.node_count() {
            next_partition[refined_labels[v]] = labels[v];
        }
        for x in node_of.iter_mut() {
            *x = refined_labels[*x];
        }
        current = next;
        partition = next_partition;
    }
    levels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> WeightedGraph {
        WeightedGraph::from_edges(
            6,
            [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0), (2, 3, 1.0)],
        )
    }

    #[test]
    fn two_triangles_split_at_the_bridge() {
        let levels = leiden(&two_triangles(), &LeidenConfig::default());
        let last = levels.last().unwrap();
        assert_eq!(last.membership, [0, 0, 0, 1, 1, 1]);
        assert!((last.modularity - 5.0 / 14.0).abs() < 1e-12);
    }

    #[test]
    fn single_node() {
        let levels = leiden(&WeightedGraph::from_edges(1, []), &LeidenConfig::default());
        assert_eq!(levels.len(), 1);
        assert_eq!(levels[0].membership, [0]);
        assert_eq!(levels[0].modularity, 0.0);
    }

    #[test]
    fn components_stay_apart() {
        let g = WeightedGraph::from_edges(5, [(0, 1, 1.0), (2, 3, 1.0), (3, 4, 1.0)]);
        for level in leiden(&g, &LeidenConfig::default()) {
            assert_ne!(level.membership[0], level.membership[2]);
        }
    }

    #[test]
    fn deterministic_and_monotone() {
        let mut edges = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for u in 0..40 {
            for v in u + 1..40 {
                let p = if u / 10 == v / 10 { 0.5 } else { 0.03 };
                if rng.random::<f64>() < p {
                    edges.push((u, v, 1.0));
                }
            }
        }
        let g = WeightedGraph::from_edges(40, edges);
        let a = leiden(&g, &LeidenConfig::default());
        let b = leiden(&g, &LeidenConfig::default());
        assert_eq!(a, b);
        for pair in a.windows(2) {
            assert!(pair[1].modularity >= pair[0].modularity - 1e-12);
        }
        assert!(a.last().unwrap().modularity > 0.4);
    }

    /// Best modularity over all set partitions (restricted growth strings).
    fn exhaustive_best(g: &WeightedGraph) -> f64 {
        let n = g.node_count();
        let mut labels = vec![0usize; n];
        let mut best = f64::NEG_INFINITY;
        loop {
            best = best.max(modularity(g, &labels));
            let mut i = n;
            loop {
                if i <= 1 {
                    return best;
                }
                i -= 1;
                let max_prev = labels[..i].iter().copied().max().unwrap_or(0);
                if labels[i] <= max_prev {
                    labels[i] += 1;
                    labels[i + 1..].iter_mut().for_each(|x| *x = 0);
                    break;
                }
            }
        }
    }

    #[test]
    fn near_optimal_on_small_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 200 {
            let n = rng.random_range(2..=7);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < 0.45 {
                        edges.push((u, v, 1.0));
                    }
                }
            }
            let g = WeightedGraph::from_edges(n, edges);
            let mut seen = vec![false; n];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(u) = stack.pop() {
                for &(v, _) in g.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            if seen.iter().any(|s| !s) {
                continue;
            }
            checked += 1;
            let best = exhaustive_best(&g);
            let got = leiden(&g, &LeidenConfig::default()).last().unwrap().modularity;
            assert!(got >= 0.95 * best - 1e-12, "got {got}, best {best}, edges {:?}", g.edges());
        }
    }
}

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::centrality::{compute_centralities, DEFAULT_DAMPING};
use super::community::{detect_communities, CommunityPartition, DEFAULT_RESOLUTION};
use super::graph::CallGraph;
use super::keyapi::KeyApiSet;
use crate::error::{Error, Result};

pub const DEFAULT_WEIGHTS: [f64; 5] = [0.2; 5];
pub const DEFAULT_TOP_N: usize = 5;
pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedCallGraph {
    pub graph: CallGraph,
    /// `R(v)` per node id of `graph`.
    pub rank: Vec<f64>,
    pub is_key: Vec<bool>,
    pub weights: [f64; 5],
}

impl ReducedCallGraph {
    pub fn empty(weights: [f64; 5]) -> Self {
        Self {
            graph: CallGraph::default(),
            rank: Vec::new(),
            is_key: Vec::new(),
            weights,
        }
    }
}

pub fn extract_key_subgraph(g: &CallGraph, keys: &KeyApiSet) -> CallGraph {
    g.induced(keys.names())
}

/// Spreads below this fraction of the magnitude count as constant, so that
/// rounding noise in a flat column is not stretched to `[0, 1]`.
const FLAT_RANGE: f64 = 1e-9;

fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let flat = range <= FLAT_RANGE * hi.abs().max(lo.abs()).max(1.0);
    v.iter()
        .map(|x| if flat { 0.0 } else { (x - lo) / range })
        .collect()
}

/// `R(v)` for every node of `sub`: min-max normalized centralities mixed by
/// `weights`.
pub fn rank_scores(sub: &CallGraph, weights: &[f64; 5], damping: f64) -> Vec<f64> {
    let table = compute_centralities(sub, damping);
    let cols: Vec<Vec<f64>> = table.columns().iter().map(|c| min_max(c)).collect();
    (0..sub.n_nodes())
        .map(|v| weights.iter().zip(&cols).map(|(w, c)| w * c[v]).sum())
        .collect()
}

/// Ranks key-node neighbors within their communities and keeps the `top_n`
/// best per key. `partition` indexes the nodes of the key subgraph.
pub fn rank_and_reduce(
    g: &CallGraph,
    keys: &KeyApiSet,
    partition: &CommunityPartition,
    weights: [f64; 5],
    top_n: usize,
    damping: f64,
) -> Result<ReducedCallGraph> {
    let wsum: f64 = weights.iter().sum();
    if wsum == 0.0 || !wsum.is_finite() {
        return Err(Error::Parameter("rank weights must not sum to zero".into()));
    }
    let gk = extract_key_subgraph(g, keys);
    if partition.assignment.len() != gk.n_nodes() {
        return Err(Error::dim(
            "rank_and_reduce partition",
            &[gk.n_nodes()],
            &[partition.assignment.len()],
        ));
    }
    if gk.is_empty() {
        return Ok(ReducedCallGraph::empty(weights));
    }
    // community of every key node, by id in `g`
    let key_comm: BTreeMap<usize, usize> = (0..gk.n_nodes())
        .map(|k| (g.id(gk.name(k)).expect("key node in g"), partition.assignment[k]))
        .collect();

    let mut votes: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&u, &c) in &key_comm {
        for &v in g.out_neighbors(u) {
            if !key_comm.contains_key(&v) {
                *votes.entry(v).or_default().entry(c).or_default() += 1;
            }
        }
    }
    let assigned: BTreeMap<usize, usize> = votes
        .iter()
        .map(|(&v, tally)| {
            let best = tally
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&c, _)| c)
                .expect("at least one vote");
            (v, best)
        })
        .collect();

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&u, &c) in key_comm.iter().chain(assigned.iter()) {
        members.entry(c).or_default().push(u);
    }
    let mut rank: HashMap<usize, f64> = HashMap::new();
    for nodes in members.values() {
        let sub = g.induced(nodes.iter().map(|&u| g.name(u)));
        let r = rank_scores(&sub, &weights, damping);
        for (i, score) in r.into_iter().enumerate() {
            rank.insert(g.id(sub.name(i)).expect("member of g"), score);
        }
    }

    let mut keep: BTreeSet<usize> = key_comm.keys().copied().collect();
    for (&u, &c) in &key_comm {
        let mut cand: Vec<usize> = g
            .out_neighbors(u)
            .iter()
            .copied()
            .filter(|v| assigned.get(v) == Some(&c))
            .collect();
        cand.sort_by(|a, b| rank[b].total_cmp(&rank[a]).then(a.cmp(b)));
        keep.extend(cand.into_iter().take(top_n));
    }
    let graph = g.induced(keep.iter().map(|&u| g.name(u)));
    let ids: Vec<usize> = (0..graph.n_nodes())
        .map(|i| g.id(graph.name(i)).expect("subset of g"))
        .collect();
    Ok(ReducedCallGraph {
        rank: ids.iter().map(|u| rank[u]).collect(),
        is_key: ids.iter().map(|u| key_comm.contains_key(u)).collect(),
        graph,
        weights,
    })
}

/// Depth-first preorder from the key nodes in importance order; children in
/// descending `R`, ties to the lower id. Each node is emitted once.
pub fn dfs_linearize(r: &ReducedCallGraph, keys: &KeyApiSet, max_len: usize) -> Vec<String> {
    let g = &r.graph;
    let children: Vec<Vec<usize>> = (0..g.n_nodes())
        .map(|u| {
            let mut c = g.out_neighbors(u).to_vec();
            c.sort_by(|a, b| r.rank[*b].total_cmp(&r.rank[*a]).then(a.cmp(b)));
            c
        })
        .collect();
    let mut seen = vec![false; g.n_nodes()];
    let mut out = Vec::new();
    for root in keys.names().filter_map(|k| g.id(k)) {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        out.push(g.name(root).to_string());
        let mut stack = vec![(root, 0usize)];
        while let Some((u, next)) = stack.last_mut() {
            if out.len() >= max_len {
                return out;
            }
            match children[*u].get(*next) {
                Some(&c) => {
                    *next += 1;
                    if !seen[c] {
                        seen[c] = true;
                        out.push(g.name(c).to_string());
                        stack.push((c, 0));
                    }
                }
                None => {
                    stack.pop();
                }
            }
        }
    }
    out.truncate(max_len);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReduceConfig {
    pub resolution: f64,
    pub weights: [f64; 5],
    pub top_n: usize,
    pub damping: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            weights: DEFAULT_WEIGHTS,
            top_n: DEFAULT_TOP_N,
            damping: DEFAULT_DAMPING,
            max_len: DEFAULT_MAX_LEN,
            seed: 0,
        }
    }
}

/// Key subgraph → communities → ranking/pruning → DFS token sequence.
pub fn graph_to_sequence(g: &CallGraph, keys: &KeyApiSet, cfg: &ReduceConfig) -> Result<(ReducedCallGraph, Vec<String>)> {
    let gk = extract_key_subgraph(g, keys);
    let part = detect_communities(&gk, cfg.resolution, cfg.seed);
    let reduced = rank_and_reduce(g, keys, &part, cfg.weights, cfg.top_n, cfg.damping)?;
    let seq = dfs_linearize(&reduced, keys, cfg.max_len);
    Ok((reduced, seq))
}

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::graph::CallGraph;
use crate::error::{Error, Result};
use crate::nnkit::init::seeded;

pub const DEFAULT_RESOLUTION: f64 = 1.0;
const GAIN_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CommunityPartition {
    /// Community of each node id; ids are dense and numbered by first
    /// appearance in node order.
    pub assignment: Vec<usize>,
    pub n_communities: usize,
    pub resolution: f64,
}

impl CommunityPartition {
    pub fn from_assignment(assignment: &[usize], resolution: f64) -> Self {
        let assignment = renumber(assignment);
        let n_communities = assignment.iter().max().map_or(0, |m| m + 1);
        Self {
            assignment,
            n_communities,
            resolution,
        }
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&u| self.assignment[u] == c)
            .collect()
    }
}

fn renumber(assignment: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    assignment
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// Modularity of `partition` on the symmetrized, self-loop-free view of `g`.
pub fn modularity(g: &CallGraph, partition: &[usize], resolution: f64) -> Result<f64> {
    if partition.len() != g.n_nodes() {
        return Err(Error::dim("modularity", &[g.n_nodes()], &[partition.len()]));
    }
    let adj = g.symmetric_adjacency();
    let two_m: usize = adj.iter().map(Vec::len).sum();
    if two_m == 0 {
        return Err(Error::Degenerate("modularity of a graph without edges".into()));
    }
    let m = two_m as f64 / 2.0;
    let mut internal: BTreeMap<usize, f64> = BTreeMap::new();
    let mut degree: BTreeMap<usize, f64> = BTreeMap::new();
    for (u, vs) in adj.iter().enumerate() {
        *degree.entry(partition[u]).or_default() += vs.len() as f64;
        for &v in vs {
            if partition[u] == partition[v] {
                // each undirected edge is seen from both ends
                *internal.entry(partition[u]).or_default() += 0.5;
            }
        }
    }
    Ok(degree
        .iter()
        .map(|(c, d)| {
            let l = internal.get(c).copied().unwrap_or(0.0);
            l / m - resolution * (d / (2.0 * m)).powi(2)
        })
        .sum())
}

/// Weighted undirected graph used across aggregation levels. `loops[c]` is
/// twice the internal edge weight of super-node `c`.
struct Level {
    adj: Vec<BTreeMap<usize, f64>>,
    loops: Vec<f64>,
}

impl Level {
    fn degree(&self, u: usize) -> f64 {
        self.loops[u] + self.adj[u].values().sum::<f64>()
    }
}

/// Greedy local moving plus aggregation until no move improves modularity.
pub fn detect_communities(g: &CallGraph, resolution: f64, seed: u64) -> CommunityPartition {
    let n = g.n_nodes();
    let sym = g.symmetric_adjacency();
    if sym.iter().all(Vec::is_empty) {
        return CommunityPartition::from_assignment(&(0..n).collect::<Vec<_>>(), resolution);
    }
    let mut level = Level {
        adj: sym
            .iter()
            .map(|vs| vs.iter().map(|&v| (v, 1.0)).collect())
            .collect(),
        loops: vec![0.0; n],
    };
    let two_m: f64 = (0..n).map(|u| level.degree(u)).sum();
    let mut rng = seeded(seed);
    let mut membership: Vec<usize> = (0..n).collect();

    loop {
        let k = level.adj.len();
        let deg: Vec<f64> = (0..k).map(|u| level.degree(u)).collect();
        let mut comm: Vec<usize> = (0..k).collect();
        let mut tot = deg.clone();
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let mut moved_any = false;
        loop {
            let mut moved = false;
            for &i in &order {
                let own = comm[i];
                tot[own] -= deg[i];
                let mut links: BTreeMap<usize, f64> = BTreeMap::new();
                for (&j, &w) in &level.adj[i] {
                    *links.entry(comm[j]).or_default() += w;
                }
                let gain = |c: usize, w: f64| w - resolution * tot[c] * deg[i] / two_m;
                let mut best = own;
                let mut best_gain = gain(own, links.get(&own).copied().unwrap_or(0.0));
                for (&c, &w) in &links {
                    let gc = gain(c, w);
                    if gc > best_gain + GAIN_EPS {
                        best = c;
                        best_gain = gc;
                    }
                }
                tot[best] += deg[i];
                if best != own {
                    comm[i] = best;
                    moved = true;
                    moved_any = true;
                }
            }
            if !moved {
                break;
            }
        }
        if !moved_any {
            break;
        }
        let dense = renumber(&comm);
        let k2 = dense.iter().max().map_or(0, |m| m + 1);
        for m in membership.iter_mut() {
            *m = dense[*m];
        }
        let mut next = Level {
            adj: vec![BTreeMap::new(); k2],
            loops: vec![0.0; k2],
        };
        for u in 0..k {
            next.loops[dense[u]] += level.loops[u];
            for (&v, &w) in &level.adj[u] {
                if dense[u] == dense[v] {
                    next.loops[dense[u]] += w;
                } else {
                    *next.adj[dense[u]].entry(dense[v]).or_default() += w;
                }
            }
        }
        level = next;
        if k2 == 1 {
            break;
        }
    }

    let found = CommunityPartition::from_assignment(&membership, resolution);
    // Never report something worse than the trivial one-community partition.
    let q_found = modularity(g, &found.assignment, resolution).unwrap_or(f64::NEG_INFINITY);
    let q_one = modularity(g, &vec![0; n], resolution).unwrap_or(f64::NEG_INFINITY);
    if q_one > q_found + GAIN_EPS {
        CommunityPartition::from_assignment(&vec![0; n], resolution)
    } else {
        found
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> CallGraph {
        CallGraph::from_edges([
            ("a", "b"),
            ("b", "c"),
            ("c", "a"),
            ("d", "e"),
            ("e", "f"),
            ("f", "d"),
        ])
    }

    #[test]
    fn two_triangle_modularity() {
        let g = two_triangles();
        let q = modularity(&g, &[0, 0, 0, 1, 1, 1], 1.0).unwrap();
        assert!((q - 0.5).abs() < 1e-12);
        assert!(modularity(&g, &[0; 6], 1.0).unwrap().abs() < 1e-12);
        let single = modularity(&g, &[0, 1, 2, 3, 4, 5], 1.0).unwrap();
        assert!((single + 6.0 * (2.0f64 / 12.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn detects_triangles() {
        let p = detect_communities(&two_triangles(), 1.0, 9);
        assert_eq!(p.assignment, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(p.n_communities, 2);
    }

    #[test]
    fn complete_graph_one_community() {
        let names = ["a", "b", "c", "d", "e"];
        let edges: Vec<(&str, &str)> = names
            .iter()
            .flat_map(|&a| names.iter().filter(move |&&b| b != a).map(move |&b| (a, b)))
            .collect();
        let p = detect_communities(&CallGraph::from_edges(edges), 1.0, 1);
        assert_eq!(p.n_communities, 1);
    }

    #[test]
    fn edgeless_gives_singletons() {
        let g = CallGraph::from_parts(["x", "y", "z"], Vec::<(&str, &str)>::new());
        let p = detect_communities(&g, 1.0, 0);
        assert_eq!(p.assignment, vec![0, 1, 2]);
        assert!(matches!(modularity(&g, &p.assignment, 1.0), Err(Error::Degenerate(_))));
    }
}

use std::collections::VecDeque;

use super::graph::CallGraph;

pub const DEFAULT_DAMPING: f64 = 0.85;
const PAGERANK_TOL: f64 = 1e-8;
const PAGERANK_MAX_ITER: usize = 200;
/// Tighter than the PageRank tolerance: eigenvector power iteration can
/// converge slowly when the two leading eigenvalues are close.
const EIGEN_TOL: f64 = 1e-12;
const EIGEN_MAX_ITER: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct CentralityTable {
    pub out_degree: Vec<f64>,
    pub pagerank: Vec<f64>,
    pub betweenness: Vec<f64>,
    pub closeness: Vec<f64>,
    pub eigenvector: Vec<f64>,
    pub damping: f64,
    pub pagerank_iterations: usize,
    pub eigen_iterations: usize,
}

impl CentralityTable {
    /// The five measures in weighting order.
    pub fn columns(&self) -> [&[f64]; 5] {
        [
            &self.out_degree,
            &self.pagerank,
            &self.betweenness,
            &self.closeness,
            &self.eigenvector,
        ]
    }
}

pub fn compute_centralities(g: &CallGraph, damping: f64) -> CentralityTable {
    let n = g.n_nodes();
    if n <= 1 {
        return CentralityTable {
            out_degree: vec![0.0; n],
            pagerank: vec![1.0; n],
            betweenness: vec![0.0; n],
            closeness: vec![0.0; n],
            eigenvector: vec![0.0; n],
            damping,
            pagerank_iterations: 0,
            eigen_iterations: 0,
        };
    }
    let (pagerank, pagerank_iterations) = pagerank(g, damping);
    let (eigenvector, eigen_iterations) = eigenvector(g);
    CentralityTable {
        out_degree: (0..n)
            .map(|u| g.out_neighbors(u).len() as f64 / (n - 1) as f64)
            .collect(),
        pagerank,
        betweenness: betweenness(g),
        closeness: closeness(g),
        eigenvector,
        damping,
        pagerank_iterations,
        eigen_iterations,
    }
}

fn pagerank(g: &CallGraph, d: f64) -> (Vec<f64>, usize) {
    let n = g.n_nodes();
    let nf = n as f64;
    let mut pr = vec![1.0 / nf; n];
    let mut iters = 0;
    for _ in 0..PAGERANK_MAX_ITER {
        iters += 1;
        let dangling: f64 = (0..n)
            .filter(|&u| g.out_neighbors(u).is_empty())
            .map(|u| pr[u])
            .sum();
        let base = (1.0 - d) / nf + d * dangling / nf;
        let mut next = vec![base; n];
        for (u, &p) in pr.iter().enumerate() {
            let outs = g.out_neighbors(u);
            if !outs.is_empty() {
                let share = d * p / outs.len() as f64;
                for &v in outs {
                    next[v] += share;
                }
            }
        }
        let delta: f64 = next.iter().zip(&pr).map(|(a, b)| (a - b).abs()).sum();
        pr = next;
        if delta < PAGERANK_TOL {
            break;
        }
    }
    (pr, iters)
}

/// Brandes accumulation over directed unweighted shortest paths.
fn betweenness(g: &CallGraph) -> Vec<f64> {
    let n = g.n_nodes();
    let mut cb = vec![0.0; n];
    for s in 0..n {
        let mut stack = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0f64; n];
        let mut dist = vec![usize::MAX; n];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            stack.push(v);
            for &w in g.out_neighbors(v) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    q.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0; n];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    cb
}

pub(crate) fn bfs_distances(g: &CallGraph, s: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.n_nodes()];
    dist[s] = 0;
    let mut q = VecDeque::from([s]);
    while let Some(v) = q.pop_front() {
        for &w in g.out_neighbors(v) {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                q.push_back(w);
            }
        }
    }
    dist
}

/// Outgoing-distance closeness with the reached-fraction correction.
fn closeness(g: &CallGraph) -> Vec<f64> {
    let n = g.n_nodes();
    (0..n)
        .map(|u| {
            let dist = bfs_distances(g, u);
            let (reached, total) = dist
                .iter()
                .enumerate()
                .filter(|&(v, &d)| v != u && d != usize::MAX)
                .fold((0usize, 0usize), |(r, t), (_, &d)| (r + 1, t + d));
            if total == 0 {
                0.0
            } else {
                (reached as f64 / total as f64) * (reached as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

/// Power iteration on `A + I` of the symmetrized adjacency, started from
/// the uniform vector; result scaled so the largest entry is 1.
fn eigenvector(g: &CallGraph) -> (Vec<f64>, usize) {
    let n = g.n_nodes();
    if g.n_edges() == 0 {
        return (vec![0.0; n], 0);
    }
    let adj = g.symmetric_adjacency();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut iters = 0;
    for _ in 0..EIGEN_MAX_ITER {
        iters += 1;
        let mut y: Vec<f64> = (0..n)
            .map(|u| x[u] + adj[u].iter().map(|&v| x[v]).sum::<f64>())
            .collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        y.iter_mut().for_each(|v| *v /= norm);
        let delta = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = y;
        if delta < EIGEN_TOL {
            break;
        }
    }
    let max = x.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        x.iter_mut().for_each(|v| *v /= max);
    }
    (x, iters)
}

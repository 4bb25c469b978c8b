use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Directed API call graph. Node ids follow lexicographic name order, so the
/// same edge set always yields the same ids regardless of input order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CallGraph {
    names: Vec<String>,
    index: HashMap<String, usize>,
    out: Vec<Vec<usize>>,
    n_edges: usize,
}

impl CallGraph {
    /// Builds a graph from named nodes and edges. Edge endpoints are added
    /// as nodes; duplicate edges and self-loops are dropped.
    pub fn from_parts<N, E, S>(nodes: N, edges: E) -> Self
    where
        N: IntoIterator<Item = S>,
        E: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut names: BTreeSet<String> = nodes.into_iter().map(|s| s.as_ref().to_string()).collect();
        let edges: Vec<(String, String)> = edges
            .into_iter()
            .map(|(a, b)| (a.as_ref().to_string(), b.as_ref().to_string()))
            .collect();
        for (a, b) in &edges {
            names.insert(a.clone());
            names.insert(b.clone());
        }
        let names: Vec<String> = names.into_iter().collect();
        let index: HashMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut sets = vec![BTreeSet::new(); names.len()];
        for (a, b) in &edges {
            let (u, v) = (index[a], index[b]);
            if u != v {
                sets[u].insert(v);
            }
        }
        let out: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let n_edges = out.iter().map(Vec::len).sum();
        Self {
            names,
            index,
            out,
            n_edges,
        }
    }

    pub fn from_edges<S: AsRef<str>>(edges: impl IntoIterator<Item = (S, S)>) -> Self {
        Self::from_parts(std::iter::empty::<S>(), edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn out_neighbors(&self, id: usize) -> &[usize] {
        &self.out[id]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.out[u].binary_search(&v).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(u, vs)| vs.iter().map(move |&v| (u, v)))
    }

    pub fn named_edges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.edges().map(|(u, v)| (self.name(u), self.name(v)))
    }

    /// Subgraph induced by the given node names (unknown names ignored).
    pub fn induced<S: AsRef<str>>(&self, keep: impl IntoIterator<Item = S>) -> CallGraph {
        let ids: BTreeSet<usize> = keep.into_iter().filter_map(|n| self.id(n.as_ref())).collect();
        let edges: Vec<(&str, &str)> = ids
            .iter()
            .flat_map(|&u| {
                self.out[u]
                    .iter()
                    .filter(|v| ids.contains(v))
                    .map(move |&v| (self.name(u), self.name(v)))
            })
            .collect();
        CallGraph::from_parts(ids.iter().map(|&i| self.name(i)), edges)
    }

    /// Undirected view: `adj[u]` holds every `v ≠ u` with an edge either way.
    pub fn symmetric_adjacency(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.n_nodes()];
        for (u, v) in self.edges() {
            sets[u].insert(v);
            sets[v].insert(u);
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    pub fn read_edge_list<R: BufRead>(reader: R) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    edges.push((a.to_string(), b.to_string()))
                }
                _ => {
                    return Err(Error::Format(format!(
                        "edge list line {}: expected `caller<TAB>callee`",
                        i + 1
                    )))
                }
            }
        }
        Ok(Self::from_edges(edges))
    }

    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        for (a, b) in self.named_edges() {
            writeln!(w, "{a}\t{b}")?;
        }
        Ok(())
    }
}

#![allow(dead_code)]

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with matching unit eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let vals = order.iter().map(|&i| a[i][i]).collect();
    let vecs = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (vals, vecs)
}

/// Sample covariance (divisor m − 1) of row-major data.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = rows.len();
    let n = rows[0].len();
    let mean: Vec<f64> = (0..n)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m as f64)
        .collect();
    let mut c = vec![vec![0.0; n]; n];
    for r in rows {
        for i in 0..n {
            for j in 0..n {
                c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in c.iter_mut() {
        for x in row.iter_mut() {
            *x /= (m - 1) as f64;
        }
    }
    c
}

/// Small deterministic LCG so oracles do not share the library's RNG.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
    }

    pub fn normalish(&mut self) -> f64 {
        (0..6).map(|_| self.next_f64()).sum::<f64>() - 3.0
    }
}

/// Adjacency as `adj[u][v]`, the oracles' own graph representation.
pub type Adj = Vec<Vec<bool>>;

pub fn adj_of(g: &dmldroid_core::callgraph::CallGraph) -> Adj {
    let n = g.n_nodes();
    let mut a = vec![vec![false; n]; n];
    for (u, v) in g.edges() {
        a[u][v] = true;
    }
    a
}

/// Node names `n0..` zero-padded so that lexicographic order = index order.
pub fn graph_of(a: &Adj) -> dmldroid_core::callgraph::CallGraph {
    let n = a.len();
    let name = |i: usize| format!("n{i:02}");
    let edges: Vec<(String, String)> = (0..n)
        .flat_map(|u| (0..n).filter(move |&v| a[u][v]).map(move |v| (name(u), name(v))))
        .collect();
    dmldroid_core::callgraph::CallGraph::from_parts((0..n).map(name), edges)
}

pub fn oracle_out_degree(a: &Adj) -> Vec<f64> {
    let n = a.len();
    a.iter()
        .map(|r| r.iter().filter(|&&b| b).count() as f64 / (n - 1) as f64)
        .collect()
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    x
}

/// Stationary PageRank as the exact solution of `(I − d·M) x = (1−d)/n`.
pub fn oracle_pagerank(a: &Adj, d: f64) -> Vec<f64> {
    let n = a.len();
    let mut m = vec![vec![0.0; n]; n];
    for u in 0..n {
        let out = a[u].iter().filter(|&&b| b).count();
        for v in 0..n {
            let p = if out == 0 { 1.0 / n as f64 } else if a[u][v] { 1.0 / out as f64 } else { 0.0 };
            m[v][u] = p;
        }
    }
    let lhs: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (i == j) as u8 as f64 - d * m[i][j]).collect())
        .collect();
    solve(lhs, vec![(1.0 - d) / n as f64; n])
}

pub fn floyd(a: &Adj) -> Vec<Vec<usize>> {
    let n = a.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for u in 0..n {
        d[u][u] = 0;
        for v in 0..n {
            if a[u][v] && u != v {
                d[u][v] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

pub fn oracle_closeness(a: &Adj) -> Vec<f64> {
    let n = a.len();
    let inf = usize::MAX / 4;
    let d = floyd(a);
    (0..n)
        .map(|u| {
            let reach: Vec<usize> = (0..n).filter(|&v| v != u && d[u][v] < inf).map(|v| d[u][v]).collect();
            let total: usize = reach.iter().sum();
            if total == 0 {
                0.0
            } else {
                let r = reach.len() as f64;
                (r / total as f64) * (r / (n - 1) as f64)
            }
        })
        .collect()
}

/// Enumerates every shortest path explicitly.
pub fn oracle_betweenness(a: &Adj) -> Vec<f64> {
    let n = a.len();
    let inf = usize::MAX / 4;
    let d = floyd(a);
    let mut cb = vec![0.0; n];
    for s in 0..n {
        for t in 0..n {
            if s == t || d[s][t] >= inf {
                continue;
            }
            let mut paths: Vec<Vec<usize>> = Vec::new();
            let mut stack = vec![vec![s]];
            while let Some(p) = stack.pop() {
                let last = *p.last().unwrap();
                if last == t {
                    paths.push(p);
                    continue;
                }
                if p.len() - 1 >= d[s][t] {
                    continue;
                }
                for v in 0..n {
                    if a[last][v] && !p.contains(&v) {
                        let mut q = p.clone();
                        q.push(v);
                        stack.push(q);
                    }
                }
            }
            let total = paths.len() as f64;
            for v in 0..n {
                if v == s || v == t {
                    continue;
                }
                let through = paths.iter().filter(|p| p.contains(&v)).count() as f64;
                cb[v] += through / total;
            }
        }
    }
    cb
}

/// Projection of the uniform vector onto the leading eigenspace of the
/// symmetrized adjacency, scaled to max 1.
pub fn oracle_eigenvector(a: &Adj) -> Vec<f64> {
    let n = a.len();
    let sym: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| ((a[i][j] || a[j][i]) && i != j) as u8 as f64).collect())
        .collect();
    if sym.iter().flatten().all(|&x| x == 0.0) {
        return vec![0.0; n];
    }
    // shift by I so the leading eigenvalue is also the largest in magnitude
    let shifted: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| sym[i][j] + (i == j) as u8 as f64).collect())
        .collect();
    let (vals, vecs) = jacobi_eigen(&shifted);
    let u = 1.0 / (n as f64).sqrt();
    let mut x = vec![0.0; n];
    for (k, lam) in vals.iter().enumerate() {
        if (lam - vals[0]).abs() > 1e-9 {
            continue;
        }
        let c: f64 = vecs[k].iter().map(|e| e * u).sum();
        for i in 0..n {
            x[i] += c * vecs[k][i];
        }
    }
    let max = x.iter().copied().fold(0.0, f64::max);
    x.iter().map(|v| v / max).collect()
}

/// Modularity evaluated straight from the double sum over node pairs.
pub fn oracle_modularity(a: &Adj, part: &[usize], gamma: f64) -> f64 {
    let n = a.len();
    let s = |i: usize, j: usize| ((a[i][j] || a[j][i]) && i != j) as u8 as f64;
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| s(i, j)).sum()).collect();
    let two_m: f64 = deg.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if part[i] == part[j] {
                q += s(i, j) - gamma * deg[i] * deg[j] / two_m;
            }
        }
    }
    q / two_m
}

/// All set partitions of `n` items as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, n: usize, cur: &mut Vec<usize>, max: usize, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for c in 0..=max + 1 {
            cur.push(c);
            rec(i + 1, n, cur, max.max(c), out);
            cur.pop();
        }
    }
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut cur = vec![0];
    rec(1, n, &mut cur, 0, &mut out);
    out
}

pub fn random_adj(g: &mut Lcg, n: usize, p: f64) -> Adj {
    (0..n)
        .map(|u| (0..n).map(|v| u != v && g.next_f64() < p).collect())
        .collect()
}

/// Every labelled digraph on up to 4 nodes, plus one representative per
/// isomorphism class on 5 nodes.
pub fn small_digraphs() -> Vec<Adj> {
    let mut out = Vec::new();
    for n in 1..=4usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v))).collect();
        for mask in 0u32..(1 << pairs.len()) {
            let mut a = vec![vec![false; n]; n];
            for (k, &(u, v)) in pairs.iter().enumerate() {
                a[u][v] = mask >> k & 1 == 1;
            }
            out.push(a);
        }
    }
    let n = 5;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v))).collect();
    let pos = |u: usize, v: usize| pairs.iter().position(|&p| p == (u, v)).unwrap();
    let mut perms = Vec::new();
    permutations(&mut (0..n).collect(), 0, &mut perms);
    let maps: Vec<Vec<usize>> = perms
        .iter()
        .map(|p| pairs.iter().map(|&(u, v)| pos(p[u], p[v])).collect())
        .collect();
    let mut seen = vec![false; 1 << pairs.len()];
    for mask in 0u32..(1 << pairs.len()) {
        if seen[mask as usize] {
            continue;
        }
        for m in &maps {
            let mut img = 0u32;
            for (k, &t) in m.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    img |= 1 << t;
                }
            }
            seen[img as usize] = true;
        }
        let mut a = vec![vec![false; n]; n];
        for (k, &(u, v)) in pairs.iter().enumerate() {
            a[u][v] = mask >> k & 1 == 1;
        }
        out.push(a);
    }
    out
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

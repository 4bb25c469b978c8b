use std::io::{BufRead, Write};

use log::warn;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nnkit::init::{seeded, Rng64};
use crate::sample::Label;
use super::graph::CallGraph;
use crate::tabular::{build_feature_matrix, BinaryFeatureMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct KeyApiConfig {
    pub k: usize,
    pub df_min: f64,
    pub trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for KeyApiConfig {
    fn default() -> Self {
        Self {
            k: 30,
            df_min: 0.05,
            trees: 64,
            max_depth: 4,
            seed: 0,
        }
    }
}

/// Key APIs in descending importance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyApiSet {
    pub entries: Vec<(String, f64)>,
}

impl KeyApiSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    /// `name<TAB>score` lines.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        for (n, s) in &self.entries {
            writeln!(w, "{n}\t{s}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (name, score) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("key API line {}: missing tab", i + 1)))?;
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("key API line {}: bad score", i + 1)))?;
            entries.push((name.to_string(), score));
        }
        Ok(Self { entries })
    }

    /// `api,score` CSV of the ranking.
    pub fn write_importance_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["api", "score"])?;
        for (n, s) in &self.entries {
            c.write_record([n.as_str(), &s.to_string()])?;
        }
        c.flush()?;
        Ok(())
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct TreeGrower<'a> {
    x: &'a BinaryFeatureMatrix,
    cols: &'a [usize],
    y: &'a [bool],
    mtry: usize,
    max_depth: usize,
    n_root: f64,
    importance: Vec<f64>,
}

impl TreeGrower<'_> {
    fn grow(&mut self, rows: &[usize], depth: usize, rng: &mut Rng64) {
        let n = rows.len();
        let pos = rows.iter().filter(|&&r| self.y[r]).count();
        if depth >= self.max_depth || n < 2 || pos == 0 || pos == n {
            return;
        }
        let parent = gini(pos, n);
        let mut cand = sample(rng, self.cols.len(), self.mtry).into_vec();
        cand.sort_unstable();
        let mut best: Option<(usize, f64)> = None;
        for c in cand {
            let f = self.cols[c];
            let (mut n1, mut p1) = (0, 0);
            for &r in rows {
                if self.x.get(r, f) == 1 {
                    n1 += 1;
                    p1 += self.y[r] as usize;
                }
            }
            let n0 = n - n1;
            if n1 == 0 || n0 == 0 {
                continue;
            }
            let child = (n1 as f64 * gini(p1, n1) + n0 as f64 * gini(pos - p1, n0)) / n as f64;
            let gain = parent - child;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((c, gain));
            }
        }
        let Some((c, gain)) = best.filter(|&(_, g)| g > 0.0) else {
            return;
        };
        self.importance[c] += n as f64 / self.n_root * gain;
        let f = self.cols[c];
        let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| self.x.get(r, f) == 0);
        self.grow(&left, depth + 1, rng);
        self.grow(&right, depth + 1, rng);
    }
}

/// API presence matrix (one row per graph, one column per API name).
pub fn build_presence<S: AsRef<str>>(graphs: &[(S, &CallGraph)]) -> Result<BinaryFeatureMatrix> {
    let records: Vec<(String, std::collections::BTreeSet<&str>)> = graphs
        .iter()
        .map(|(id, g)| (id.as_ref().to_string(), g.names().iter().map(String::as_str).collect()))
        .collect();
    build_feature_matrix(&records)
}

/// Document-frequency filter followed by mean-decrease-in-impurity ranking
/// from a seeded forest of shallow trees. Zero-importance APIs are dropped.
pub fn select_key_apis(
    presence: &BinaryFeatureMatrix,
    labels: &[Label],
    cfg: &KeyApiConfig,
) -> Result<KeyApiSet> {
    let m = presence.n_samples();
    if labels.len() != m {
        return Err(Error::dim("select_key_apis", &[m], &[labels.len()]));
    }
    let y: Vec<bool> = labels.iter().map(|l| l.is_malware()).collect();
    let n_mal = y.iter().filter(|&&b| b).count();
    let n_ben = m - n_mal;
    if n_mal == 0 || n_ben == 0 {
        return Err(Error::Degenerate("key API selection needs both classes".into()));
    }
    if cfg.trees == 0 {
        return Err(Error::Parameter("forest needs at least one tree".into()));
    }
    let cols: Vec<usize> = (0..presence.n_features())
        .filter(|&j| {
            let (mut dm, mut db) = (0usize, 0usize);
            for i in 0..m {
                if presence.get(i, j) == 1 {
                    if y[i] {
                        dm += 1;
                    } else {
                        db += 1;
                    }
                }
            }
            dm as f64 / n_mal as f64 >= cfg.df_min || db as f64 / n_ben as f64 >= cfg.df_min
        })
        .collect();
    if cols.is_empty() {
        warn!("no API passes the document-frequency filter");
        return Ok(KeyApiSet::default());
    }
    let mut rng = seeded(cfg.seed);
    let mtry = ((cols.len() as f64).sqrt().round() as usize).clamp(1, cols.len());
    let mut total = vec![0.0; cols.len()];
    for _ in 0..cfg.trees {
        let rows: Vec<usize> = (0..m).map(|_| rng.gen_range(0..m)).collect();
        let mut grower = TreeGrower {
            x: presence,
            cols: &cols,
            y: &y,
            mtry,
            max_depth: cfg.max_depth,
            n_root: m as f64,
            importance: vec![0.0; cols.len()],
        };
        grower.grow(&rows, 0, &mut rng);
        let s: f64 = grower.importance.iter().sum();
        if s > 0.0 {
            for (t, v) in total.iter_mut().zip(&grower.importance) {
                *t += v / s;
            }
        }
    }
    let mut ranked: Vec<(String, f64)> = cols
        .iter()
        .zip(&total)
        .filter(|(_, &s)| s > 0.0)
        .map(|(&j, &s)| (presence.feature_names[j].clone(), s / cfg.trees as f64))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if ranked.len() < cfg.k {
        warn!("only {} APIs have nonzero importance; wanted {}", ranked.len(), cfg.k);
    }
    ranked.truncate(cfg.k);
    Ok(KeyApiSet { entries: ranked })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> (BinaryFeatureMatrix, Vec<Label>) {
        // col 0: perfect separator, col 1: everywhere, col 2: weak, col 3: never
        let mut bits = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let mal = i % 2 == 0;
            bits.extend([mal as u8, 1, ((i % 3 == 0) || mal && i % 5 == 0) as u8, 0]);
            labels.push(Label::from_bit(mal as u8).unwrap());
        }
        let m = BinaryFeatureMatrix::new(
            (0..40).map(|i| format!("s{i}")).collect(),
            vec!["sep".into(), "all".into(), "weak".into(), "none".into()],
            bits,
        )
        .unwrap();
        (m, labels)
    }

    #[test]
    fn separator_first_constant_excluded() {
        let (m, y) = corpus();
        let k = select_key_apis(&m, &y, &KeyApiConfig::default()).unwrap();
        assert_eq!(k.entries[0].0, "sep");
        assert!(!k.contains("all"));
        assert!(!k.contains("none"));
        assert!(k.entries.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn single_class_rejected() {
        let (m, _) = corpus();
        let y = vec![Label::Benign; 40];
        assert!(select_key_apis(&m, &y, &KeyApiConfig::default()).is_err());
    }

    #[test]
    fn text_round_trip() {
        let k = KeyApiSet {
            entries: vec![("a.b()".into(), 0.5), ("c".into(), 0.25)],
        };
        let mut buf = Vec::new();
        k.write_text(&mut buf).unwrap();
        assert_eq!(KeyApiSet::read_text(buf.as_slice()).unwrap(), k);
        let mut csv = Vec::new();
        k.write_importance_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("api,score\n"));
    }
}

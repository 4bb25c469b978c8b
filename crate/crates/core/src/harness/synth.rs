use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::callgraph::CallGraph;
use crate::deximg::DexBuilder;
use crate::error::{Error, Result};
use crate::nnkit::init::{seeded, Rng64};
use crate::sample::{ApkSample, Label};

/// One class's signal profile.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProfile {
    /// Presence probability of each benign-marker bit.
    pub p_benign_marker: f64,
    /// Presence probability of each malware-marker bit.
    pub p_malware_marker: f64,
    /// Presence probability of each behavior bit (protected at attack time).
    pub p_behavior: f64,
    /// Fraction of DEX bytes in the id tables, drawn uniformly from this range.
    pub ids_fraction: (f64, f64),
    /// Chains planted from this class's own pool (min, max).
    pub own_chains: (usize, usize),
    /// Probability of also planting one chain from the other class's pool.
    pub cross_chain_p: f64,
}

/// Generator parameters for the synthetic corpus that stands in for a real
/// APK collection. Every modality carries class signal.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_benign: usize,
    pub n_malware: usize,
    pub seed: u64,
    pub benign: ClassProfile,
    pub malware: ClassProfile,
    pub benign_marker_bits: usize,
    pub malware_marker_bits: usize,
    pub behavior_bits: usize,
    /// Class-independent bits with presence drawn per bit from `noise_p`.
    pub noise_bits: usize,
    pub noise_p: (f64, f64),
    /// DEX file size range in bytes.
    pub dex_size: (usize, usize),
    pub multidex_p: f64,
    /// API universe: common APIs plus per-class chain pools.
    pub common_apis: usize,
    pub chains_per_class: usize,
    pub chain_len: usize,
    /// Common APIs per app (min, max) and out-degree (min, max).
    pub app_apis: (usize, usize),
    pub out_degree: (usize, usize),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_benign: 250,
            n_malware: 750,
            seed: 42,
            benign: ClassProfile {
                p_benign_marker: 0.9,
                p_malware_marker: 0.08,
                p_behavior: 0.03,
                ids_fraction: (0.12, 0.28),
                own_chains: (1, 3),
                cross_chain_p: 0.1,
            },
            malware: ClassProfile {
                p_benign_marker: 0.15,
                p_malware_marker: 0.4,
                p_behavior: 0.55,
                ids_fraction: (0.42, 0.58),
                own_chains: (1, 3),
                cross_chain_p: 0.1,
            },
            benign_marker_bits: 8,
            malware_marker_bits: 6,
            behavior_bits: 2,
            noise_bits: 48,
            noise_p: (0.05, 0.5),
            dex_size: (6 * 1024, 14 * 1024),
            multidex_p: 0.1,
            common_apis: 80,
            chains_per_class: 6,
            chain_len: 3,
            app_apis: (20, 40),
            out_degree: (1, 3),
        }
    }
}

impl SyntheticConfig {
    /// Same generator with the two class profiles exchanged.
    pub fn class_flipped(&self) -> Self {
        let mut c = self.clone();
        std::mem::swap(&mut c.benign, &mut c.malware);
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_benign == 0 || self.n_malware == 0 {
            return Err(Error::Configuration("synthetic corpus needs at least one sample per class".into()));
        }
        let probs = [
            self.benign.p_benign_marker,
            self.benign.p_malware_marker,
            self.benign.p_behavior,
            self.benign.cross_chain_p,
            self.malware.p_benign_marker,
            self.malware.p_malware_marker,
            self.malware.p_behavior,
            self.malware.cross_chain_p,
            self.noise_p.0,
            self.noise_p.1,
            self.multidex_p,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || self.noise_p.0 > self.noise_p.1 {
            return Err(Error::Configuration("probabilities must lie in [0, 1]".into()));
        }
        for p in [&self.benign, &self.malware] {
            let (lo, hi) = p.ids_fraction;
            if !(0.0 < lo && lo <= hi && hi < 1.0) || p.own_chains.0 > p.own_chains.1 {
                return Err(Error::Configuration("bad class profile ranges".into()));
            }
        }
        if self.dex_size.0 < 512 || self.dex_size.0 > self.dex_size.1 {
            return Err(Error::Configuration("dex size range must start at 512 bytes".into()));
        }
        if self.app_apis.0 > self.app_apis.1
            || self.app_apis.1 > self.common_apis
            || self.out_degree.0 > self.out_degree.1
            || self.chain_len < 2
            || self.chains_per_class == 0
        {
            return Err(Error::Configuration("bad graph parameters".into()));
        }
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        names.extend((0..self.benign_marker_bits).map(|i| format!("android.permission.COMMON_{i:02}")));
        names.extend((0..self.malware_marker_bits).map(|i| format!("android.permission.RARE_{i:02}")));
        names.extend((0..self.behavior_bits).map(|i| format!("android.permission.BEHAVIOR_{i:02}")));
        names.extend((0..self.noise_bits).map(|i| format!("android.intent.action.MISC_{i:02}")));
        names
    }

    fn chain(&self, class: usize, c: usize) -> Vec<String> {
        let pool = if class == 0 { "ui" } else { "net" };
        (0..self.chain_len)
            .map(|k| format!("Lsyn/{pool}/Chain{c}Step{k};->run"))
            .collect()
    }
}

/// A generated or ingested corpus with its tabular feature names.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ApkSample>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// SHA-256 over a canonical serialization of every sample.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.feature_names {
            h.update(n.as_bytes());
            h.update([0]);
        }
        for s in &self.samples {
            h.update(s.id.as_bytes());
            h.update([0, s.label as u8]);
            if let Some(b) = &s.tabular {
                h.update([1]);
                h.update(b);
            }
            if let Some(files) = &s.dex {
                h.update([2]);
                for f in files {
                    h.update((f.len() as u64).to_le_bytes());
                    h.update(f);
                }
            }
            if let Some(g) = &s.graph {
                h.update([3]);
                for n in g.names() {
                    h.update(n.as_bytes());
                    h.update([0]);
                }
                for (u, v) in g.edges() {
                    h.update((u as u64).to_le_bytes());
                    h.update((v as u64).to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn bernoulli(rng: &mut Rng64, p: f64) -> u8 {
    (rng.gen_range(0.0..1.0) < p) as u8
}

fn tabular_row(cfg: &SyntheticConfig, prof: &ClassProfile, noise_p: &[f64], rng: &mut Rng64) -> Vec<u8> {
    let mut row = Vec::new();
    row.extend((0..cfg.benign_marker_bits).map(|_| bernoulli(rng, prof.p_benign_marker)));
    row.extend((0..cfg.malware_marker_bits).map(|_| bernoulli(rng, prof.p_malware_marker)));
    row.extend((0..cfg.behavior_bits).map(|_| bernoulli(rng, prof.p_behavior)));
    row.extend(noise_p.iter().map(|&p| bernoulli(rng, p)));
    row
}

/// Item widths of the six id tables.
const TABLE_WIDTHS: [usize; 6] = [4, 4, 12, 8, 8, 32];
const TABLE_SHARES: [f64; 6] = [0.35, 0.10, 0.15, 0.15, 0.15, 0.10];

fn dex_file(total: usize, ids_fraction: f64, rng: &mut Rng64) -> Result<Vec<u8>> {
    let body = total.saturating_sub(crate::deximg::HEADER_LEN);
    let ids_budget = (body as f64 * ids_fraction) as usize;
    let mut builder = DexBuilder::new(Vec::new());
    let mut used = 0;
    for (i, (&w, &share)) in TABLE_WIDTHS.iter().zip(&TABLE_SHARES).enumerate() {
        let len = ((ids_budget as f64 * share) as usize / w) * w;
        used += len;
        // Identifier tables look like text; the image sees printable bytes.
        builder = builder.with_table(i, (0..len).map(|_| rng.gen_range(0x21u8..=0x7e)).collect());
    }
    let mut data = vec![0u8; body - used];
    rng.fill(data.as_mut_slice());
    builder.data = data;
    builder.build()
}

fn dex_files(cfg: &SyntheticConfig, prof: &ClassProfile, rng: &mut Rng64) -> Result<Vec<Vec<u8>>> {
    let (lo, hi) = prof.ids_fraction;
    let frac = rng.gen_range(lo..=hi);
    let total = rng.gen_range(cfg.dex_size.0..=cfg.dex_size.1);
    if rng.gen_range(0.0..1.0) < cfg.multidex_p {
        let first = total * 2 / 3;
        Ok(vec![dex_file(first, frac, rng)?, dex_file(total - first, frac, rng)?])
    } else {
        Ok(vec![dex_file(total, frac, rng)?])
    }
}

fn call_graph(cfg: &SyntheticConfig, class: usize, prof: &ClassProfile, rng: &mut Rng64) -> CallGraph {
    let n_common = rng.gen_range(cfg.app_apis.0..=cfg.app_apis.1);
    let mut pool: Vec<usize> = (0..cfg.common_apis).collect();
    pool.shuffle(rng);
    let mut nodes: Vec<String> = pool[..n_common]
        .iter()
        .map(|i| format!("Lsyn/common/Api{i:03};->call"))
        .collect();
    let mut edges: Vec<(String, String)> = Vec::new();
    for u in 0..n_common {
        let deg = rng.gen_range(cfg.out_degree.0..=cfg.out_degree.1);
        for _ in 0..deg {
            let v = rng.gen_range(0..n_common);
            if v != u {
                edges.push((nodes[u].clone(), nodes[v].clone()));
            }
        }
    }
    let mut plant = |chain: Vec<String>, rng: &mut Rng64, nodes: &mut Vec<String>| {
        let entry = nodes[rng.gen_range(0..n_common)].clone();
        edges.push((entry, chain[0].clone()));
        for w in chain.windows(2) {
            edges.push((w[0].clone(), w[1].clone()));
        }
        // The chain's sink calls back into ordinary code.
        let exit = nodes[rng.gen_range(0..n_common)].clone();
        edges.push((chain[chain.len() - 1].clone(), exit));
        nodes.extend(chain);
    };
    let k = rng.gen_range(prof.own_chains.0..=prof.own_chains.1);
    let mut chains: Vec<usize> = (0..cfg.chains_per_class).collect();
    chains.shuffle(rng);
    for &c in chains.iter().take(k) {
        plant(cfg.chain(class, c), rng, &mut nodes);
    }
    if rng.gen_range(0.0..1.0) < prof.cross_chain_p {
        let c = rng.gen_range(0..cfg.chains_per_class);
        plant(cfg.chain(1 - class, c), rng, &mut nodes);
    }
    CallGraph::from_parts(nodes, edges)
}

/// Deterministic corpus: benign samples first, then malware, ids
/// `app00000`, `app00001`, ... Sample `k` of a class draws from a stream
/// keyed by `(seed, profile, k)`, so exchanging the class profiles
/// exchanges the generated contents exactly.
pub fn synth_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut noise_rng = seeded(cfg.seed ^ 0x0015_E000);
    let noise_p: Vec<f64> = (0..cfg.noise_bits)
        .map(|_| noise_rng.gen_range(cfg.noise_p.0..=cfg.noise_p.1))
        .collect();
    // Profiles are identified by their role in the default (unflipped) layout.
    let mut samples = Vec::with_capacity(cfg.n_benign + cfg.n_malware);
    for (label, count) in [(Label::Benign, cfg.n_benign), (Label::Malware, cfg.n_malware)] {
        let prof = if label.is_malware() { &cfg.malware } else { &cfg.benign };
        let class = profile_class(cfg, prof);
        for k in 0..count {
            let mut rng = seeded(cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(((class as u64) << 40) | k as u64));
            let tabular = tabular_row(cfg, prof, &noise_p, &mut rng);
            let dex = dex_files(cfg, prof, &mut rng)?;
            let graph = call_graph(cfg, class, prof, &mut rng);
            samples.push(ApkSample {
                id: format!("app{:05}", samples.len()),
                label,
                tabular: Some(tabular),
                dex: Some(dex),
                graph: Some(graph),
            });
        }
    }
    Ok(Dataset {
        samples,
        feature_names: cfg.feature_names(),
    })
}

/// 0 for a benign-like profile (more benign markers than malware markers),
/// 1 otherwise; selects the chain pool and the sample stream.
fn profile_class(_cfg: &SyntheticConfig, prof: &ClassProfile) -> usize {
    (prof.p_malware_marker > prof.p_benign_marker) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            n_benign: 6,
            n_malware: 6,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_digest() {
        let a = synth_dataset(&small()).unwrap();
        let b = synth_dataset(&small()).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = synth_dataset(&SyntheticConfig { seed: 43, ..small() }).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn zero_count_rejected() {
        let cfg = SyntheticConfig { n_malware: 0, ..small() };
        assert!(matches!(synth_dataset(&cfg), Err(Error::Configuration(_))));
    }

    #[test]
    fn flip_swaps_contents() {
        let a = synth_dataset(&small()).unwrap();
        let b = synth_dataset(&small().class_flipped()).unwrap();
        for k in 0..6 {
            let (ben, mal) = (&a.samples[k], &a.samples[6 + k]);
            let (fben, fmal) = (&b.samples[k], &b.samples[6 + k]);
            assert_eq!(fmal.tabular, ben.tabular);
            assert_eq!(fmal.dex, ben.dex);
            assert_eq!(fmal.graph, ben.graph);
            assert_eq!(fben.tabular, mal.tabular);
            assert_eq!(fmal.label, Label::Malware);
        }
    }

    #[test]
    fn every_dex_parses() {
        let d = synth_dataset(&small()).unwrap();
        for s in &d.samples {
            for f in s.dex.as_ref().unwrap() {
                crate::deximg::parse_dex(f).unwrap();
            }
        }
    }
}

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::callgraph::CallGraph;
use crate::deximg::DexSections;
use crate::error::{Error, Result};
use crate::nnkit::init::{seeded, Rng64};
use crate::sample::ApkSample;

pub const DEFAULT_JUNK_RATIO: f64 = 0.10;
pub const DEFAULT_INDIRECTION_RATIO: f64 = 0.20;
pub const DEFAULT_ENCRYPTION_RATIO: f64 = 0.50;

/// Name stem of nodes introduced by call indirection.
pub const INDIRECTION_STEM: &str = "obf.Indirection";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObfuscationMode {
    /// Identifier renaming.
    Rn,
    /// Junk code and call indirection.
    Co,
    /// String/resource encryption.
    Enc,
    /// Rn, then Co, then Enc.
    Mixed,
}

impl ObfuscationMode {
    pub const ALL: [ObfuscationMode; 4] = [
        ObfuscationMode::Rn,
        ObfuscationMode::Co,
        ObfuscationMode::Enc,
        ObfuscationMode::Mixed,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ObfuscationMode::Rn => "rn",
            ObfuscationMode::Co => "co",
            ObfuscationMode::Enc => "enc",
            ObfuscationMode::Mixed => "mixed",
        }
    }
}

impl fmt::Display for ObfuscationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ObfuscationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ObfuscationMode::ALL
            .into_iter()
            .find(|m| m.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Configuration(format!("unknown obfuscation mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObfuscationSpec {
    pub mode: ObfuscationMode,
    pub seed: u64,
    pub junk_ratio: f64,
    pub indirection_ratio: f64,
    pub encryption_ratio: f64,
}

impl ObfuscationSpec {
    pub fn new(mode: ObfuscationMode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            junk_ratio: DEFAULT_JUNK_RATIO,
            indirection_ratio: DEFAULT_INDIRECTION_RATIO,
            encryption_ratio: DEFAULT_ENCRYPTION_RATIO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("junk ratio", self.junk_ratio),
            ("indirection ratio", self.indirection_ratio),
            ("encryption ratio", self.encryption_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Parameter(format!("{name} {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Per-sample stream: the spec seed mixed with an FNV-1a hash of the id, so
/// a corpus gets independent but reproducible randomness per app.
fn sample_rng(seed: u64, id: &str, salt: u64) -> Rng64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seeded(seed ^ h ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Rn: every ids-section byte becomes a random printable ASCII byte.
pub fn rename_identifiers(sections: &mut DexSections, rng: &mut Rng64) {
    for b in sections.ids.iter_mut() {
        *b = rng.gen_range(0x21u8..=0x7e);
    }
}

/// Nop / goto+1 / const/4 code units used as filler.
const JUNK_UNITS: [[u8; 2]; 3] = [[0x00, 0x00], [0x28, 0x01], [0x12, 0x00]];

/// Co (bytes): inserts `round(ratio · len)` junk bytes, as two-byte code
/// units, at seeded positions of the data section.
pub fn insert_junk(sections: &mut DexSections, ratio: f64, rng: &mut Rng64) {
    let extra = (ratio * sections.data.len() as f64).round() as usize;
    if extra == 0 {
        return;
    }
    let units = extra.div_ceil(2);
    let len = sections.data.len();
    let mut cuts: Vec<usize> = (0..units).map(|_| rng.gen_range(0..=len)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(len + extra);
    let mut prev = 0;
    let mut left = extra;
    for c in cuts {
        out.extend_from_slice(&sections.data[prev..c]);
        prev = c;
        let unit = JUNK_UNITS[rng.gen_range(0..JUNK_UNITS.len())];
        let take = left.min(2);
        out.extend_from_slice(&unit[..take]);
        left -= take;
    }
    out.extend_from_slice(&sections.data[prev..]);
    sections.data = out;
}

/// Co (graph): rewires `round(ratio · |E|)` seeded edges `u→v` as
/// `u→w→v` through fresh nodes `w`.
pub fn indirect_calls(g: &CallGraph, ratio: f64, rng: &mut Rng64) -> CallGraph {
    let edges: Vec<(usize, usize)> = g.edges().collect();
    let k = ((ratio * edges.len() as f64).round() as usize).min(edges.len());
    let mut chosen: Vec<usize> = sample_indices(rng, edges.len(), k).into_vec();
    chosen.sort_unstable();
    let chosen: BTreeSet<usize> = chosen.into_iter().collect();
    let mut names: Vec<String> = g.names().to_vec();
    let taken: BTreeSet<&str> = g.names().iter().map(String::as_str).collect();
    let mut next = 0usize;
    let mut fresh = || loop {
        let n = format!("{INDIRECTION_STEM}{next}.call");
        next += 1;
        if !taken.contains(n.as_str()) {
            return n;
        }
    };
    let mut out_edges: Vec<(String, String)> = Vec::with_capacity(edges.len() + k);
    for (i, &(u, v)) in edges.iter().enumerate() {
        let (u, v) = (g.name(u).to_string(), g.name(v).to_string());
        if chosen.contains(&i) {
            let w = fresh();
            names.push(w.clone());
            out_edges.push((u, w.clone()));
            out_edges.push((w, v));
        } else {
            out_edges.push((u, v));
        }
    }
    CallGraph::from_parts(names, out_edges)
}

/// Enc: overwrites a contiguous `round(ratio · len)` run of the data
/// section, at a seeded offset, with uniform random bytes.
pub fn encrypt_region(sections: &mut DexSections, ratio: f64, rng: &mut Rng64) {
    let len = sections.data.len();
    let n = ((ratio * len as f64).round() as usize).min(len);
    if n == 0 {
        return;
    }
    let start = rng.gen_range(0..=len - n);
    rng.fill(&mut sections.data[start..start + n]);
}

fn transform_dex(files: &[Vec<u8>], spec: &ObfuscationSpec, rng: &mut Rng64) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let mut s = DexSections::parse(f)?;
        let (rn, co, enc) = stages(spec.mode);
        if rn {
            rename_identifiers(&mut s, rng);
        }
        if co {
            insert_junk(&mut s, spec.junk_ratio, rng);
        }
        if enc {
            encrypt_region(&mut s, spec.encryption_ratio, rng);
        }
        out.push(if rn && !co && !enc {
            // Renaming never changes lengths; splice to keep the header bytes.
            let mut b = f.clone();
            let layout = crate::deximg::parse_dex(f)?;
            b[layout.ids.range()].copy_from_slice(&s.ids);
            b
        } else {
            s.to_dex_bytes()?
        });
    }
    Ok(out)
}

fn stages(mode: ObfuscationMode) -> (bool, bool, bool) {
    match mode {
        ObfuscationMode::Rn => (true, false, false),
        ObfuscationMode::Co => (false, true, false),
        ObfuscationMode::Enc => (false, false, true),
        ObfuscationMode::Mixed => (true, true, true),
    }
}

/// Applies the simulator for `spec.mode`. TF bits are never touched.
pub fn obfuscate(sample: &ApkSample, spec: &ObfuscationSpec) -> Result<ApkSample> {
    spec.validate()?;
    let missing = |modality| Error::ModalityMissing {
        sample: sample.id.clone(),
        modality,
    };
    let (_, co, _) = stages(spec.mode);
    let dex = sample.dex.as_ref().ok_or_else(|| missing("dex"))?;
    if co && sample.graph.is_none() {
        return Err(missing("graph"));
    }
    let mut rng = sample_rng(spec.seed, &sample.id, 1);
    let mut out = sample.clone();
    out.dex = Some(transform_dex(dex, spec, &mut rng)?);
    if co {
        let mut grng = sample_rng(spec.seed, &sample.id, 2);
        out.graph = sample
            .graph
            .as_ref()
            .map(|g| indirect_calls(g, spec.indirection_ratio, &mut grng));
    }
    Ok(out)
}

/// Shannon entropy in bits per byte.
pub fn shannon_entropy(bytes: &[u8]) -> f64 {
    if bytes.is_empty() {
        return 0.0;
    }
    let mut counts = [0usize; 256];
    for &b in bytes {
        counts[b as usize] += 1;
    }
    let n = bytes.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sections(data: usize) -> DexSections {
        DexSections {
            header: vec![7; 112],
            ids: vec![b'a'; 40],
            data: (0..data).map(|i| (i % 3) as u8).collect(),
        }
    }

    #[test]
    fn junk_grows_by_ratio() {
        let mut s = sections(1000);
        insert_junk(&mut s, 0.1, &mut seeded(1));
        assert_eq!(s.data.len(), 1100);
        let mut s = sections(1000);
        insert_junk(&mut s, 0.0, &mut seeded(1));
        assert_eq!(s, sections(1000));
    }

    #[test]
    fn encryption_ratio_zero_is_identity() {
        let mut s = sections(500);
        encrypt_region(&mut s, 0.0, &mut seeded(3));
        assert_eq!(s, sections(500));
    }

    #[test]
    fn renaming_keeps_lengths_and_printability() {
        let mut s = sections(10);
        rename_identifiers(&mut s, &mut seeded(2));
        assert_eq!(s.ids.len(), 40);
        assert!(s.ids.iter().all(|b| (0x21..=0x7e).contains(b)));
        assert_eq!(s.header, vec![7; 112]);
    }

    #[test]
    fn indirection_counts() {
        let g = CallGraph::from_edges([("a", "b"), ("b", "c"), ("c", "d"), ("a", "d"), ("d", "e")]);
        let h = indirect_calls(&g, 0.4, &mut seeded(5));
        assert_eq!(h.n_nodes(), 7);
        assert_eq!(h.n_edges(), 7);
        let fresh: Vec<&String> = h.names().iter().filter(|n| n.starts_with(INDIRECTION_STEM)).collect();
        assert_eq!(fresh.len(), 2);
    }

    #[test]
    fn entropy_extremes() {
        assert_eq!(shannon_entropy(&[5; 100]), 0.0);
        let all: Vec<u8> = (0..=255).collect();
        assert!((shannon_entropy(&all) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn modes_parse() {
        for m in ObfuscationMode::ALL {
            assert_eq!(m.tag().parse::<ObfuscationMode>().unwrap(), m);
        }
        assert!("xor".parse::<ObfuscationMode>().is_err());
    }
}

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;

use super::pipeline::stratified_split;
use super::synth::Dataset;
use crate::callgraph::CallGraph;
use crate::deximg::read_dex_input;
use crate::error::{Error, Result};
use crate::sample::{ApkSample, Label};
use crate::tabular::{read_tabular_csv, write_tabular_csv, BinaryFeatureMatrix};

pub const TABULAR_FILE: &str = "tabular.csv";
pub const DEX_DIR: &str = "dex";
pub const GRAPH_DIR: &str = "graphs";
pub const GRAPH_EXT: &str = "tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum IngestFormat {
    TabularCsv,
    DexDir,
    GraphEdgelist,
}

impl IngestFormat {
    pub fn tag(self) -> &'static str {
        match self {
            IngestFormat::TabularCsv => "tabular-csv",
            IngestFormat::DexDir => "dex-dir",
            IngestFormat::GraphEdgelist => "graph-edgelist",
        }
    }
}

impl fmt::Display for IngestFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for IngestFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular-csv" => Ok(IngestFormat::TabularCsv),
            "dex-dir" => Ok(IngestFormat::DexDir),
            "graph-edgelist" => Ok(IngestFormat::GraphEdgelist),
            _ => Err(Error::Configuration(format!("unknown ingest format `{s}`"))),
        }
    }
}

/// Bookkeeping from a join: nothing here is fatal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    /// Ids seen in a DEX or graph fragment but in no labeled CSV row.
    pub unjoinable: Vec<(String, IngestFormat)>,
    /// Labeled samples lacking one or more modalities.
    pub missing: BTreeMap<String, Vec<&'static str>>,
    pub warnings: Vec<String>,
}

impl IngestReport {
    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (id, f) in &self.unjoinable {
            writeln!(w, "unjoinable\t{id}\t{f}")?;
        }
        for (id, mods) in &self.missing {
            writeln!(w, "missing\t{id}\t{}", mods.join(","))?;
        }
        for msg in &self.warnings {
            writeln!(w, "warning\t{msg}")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Fragments {
    tabular: Option<(Vec<String>, BTreeMap<String, (Vec<u8>, Label)>)>,
    dex: BTreeMap<String, Vec<Vec<u8>>>,
    graphs: BTreeMap<String, CallGraph>,
}

fn entries(dir: &Path, report: &mut IngestReport) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Ingestion(format!("{} is not a directory", dir.display())));
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    out.sort();
    if out.is_empty() {
        report.warn(format!("{} is empty", dir.display()));
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

fn read_fragment(f: &mut Fragments, format: IngestFormat, path: &Path, report: &mut IngestReport) -> Result<()> {
    match format {
        IngestFormat::TabularCsv => {
            let csv = read_tabular_csv(BufReader::new(File::open(path)?))?;
            if csv.matrix.n_samples() == 0 {
                report.warn(format!("{} has no rows", path.display()));
            }
            let (names, rows) = f.tabular.get_or_insert_with(|| (csv.matrix.feature_names.clone(), BTreeMap::new()));
            let m = csv.matrix.align(names);
            for (i, label) in csv.labels.into_iter().enumerate() {
                let id = m.sample_ids[i].clone();
                if rows.insert(id.clone(), (m.row(i).to_vec(), label)).is_some() {
                    return Err(Error::Ingestion(format!("duplicate sample id `{id}`")));
                }
            }
        }
        IngestFormat::DexDir => {
            // `<id>.dex` files or `<id>/classes*.dex` multidex directories
            for p in entries(path, report)? {
                if p.is_dir() || p.extension().is_some_and(|x| x == "dex") {
                    f.dex.insert(stem(&p), read_dex_input(&p)?);
                }
            }
        }
        IngestFormat::GraphEdgelist => {
            for p in entries(path, report)? {
                if p.is_file() {
                    let g = CallGraph::read_edge_list(BufReader::new(File::open(&p)?))?;
                    f.graphs.insert(stem(&p), g);
                }
            }
        }
    }
    Ok(())
}

/// Reads every fragment and joins on sample id. Labels come from the
/// tabular CSV, so ids without a CSV row are reported as unjoinable.
pub fn ingest(sources: &[(IngestFormat, PathBuf)]) -> Result<(Dataset, IngestReport)> {
    let mut report = IngestReport::default();
    let mut frags = Fragments::default();
    for (format, path) in sources {
        read_fragment(&mut frags, *format, path, &mut report)?;
    }
    let (feature_names, rows) = frags.tabular.take().unwrap_or_default();
    for id in frags.dex.keys().filter(|id| !rows.contains_key(*id)) {
        report.unjoinable.push((id.clone(), IngestFormat::DexDir));
    }
    for id in frags.graphs.keys().filter(|id| !rows.contains_key(*id)) {
        report.unjoinable.push((id.clone(), IngestFormat::GraphEdgelist));
    }
    let has = |f: IngestFormat| sources.iter().any(|(g, _)| *g == f);
    let mut samples = Vec::with_capacity(rows.len());
    for (id, (bits, label)) in rows {
        let s = ApkSample {
            dex: frags.dex.remove(&id),
            graph: frags.graphs.remove(&id),
            tabular: Some(bits),
            label,
            id,
        };
        let mut lacks = Vec::new();
        if s.dex.is_none() && has(IngestFormat::DexDir) {
            lacks.push("dex");
        }
        if s.graph.is_none() && has(IngestFormat::GraphEdgelist) {
            lacks.push("graph");
        }
        if !lacks.is_empty() {
            report.missing.insert(s.id.clone(), lacks);
        }
        samples.push(s);
    }
    if samples.is_empty() {
        report.warn("ingest produced an empty dataset".into());
    }
    Ok((Dataset { samples, feature_names }, report))
}

/// Standard layout under `dir`: `tabular.csv`, `dex/`, `graphs/`.
pub fn layout_sources(dir: &Path) -> Vec<(IngestFormat, PathBuf)> {
    [
        (IngestFormat::TabularCsv, dir.join(TABULAR_FILE)),
        (IngestFormat::DexDir, dir.join(DEX_DIR)),
        (IngestFormat::GraphEdgelist, dir.join(GRAPH_DIR)),
    ]
    .into_iter()
    .filter(|(_, p)| p.exists())
    .collect()
}

/// Writes `data` in the standard layout. Multidex samples get a directory.
pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join(DEX_DIR))?;
    fs::create_dir_all(dir.join(GRAPH_DIR))?;
    let with_tf: Vec<&ApkSample> = data.samples.iter().filter(|s| s.tabular.is_some()).collect();
    let m = BinaryFeatureMatrix::new(
        with_tf.iter().map(|s| s.id.clone()).collect(),
        data.feature_names.clone(),
        with_tf.iter().flat_map(|s| s.tabular.clone().expect("filtered")).collect(),
    )?;
    let labels: Vec<Label> = with_tf.iter().map(|s| s.label).collect();
    write_tabular_csv(BufWriter::new(File::create(dir.join(TABULAR_FILE))?), &m, &labels, None)?;
    for s in &data.samples {
        match s.dex.as_deref() {
            Some([one]) => fs::write(dir.join(DEX_DIR).join(format!("{}.dex", s.id)), one)?,
            Some(files) => {
                let sub = dir.join(DEX_DIR).join(&s.id);
                fs::create_dir_all(&sub)?;
                for (k, bytes) in files.iter().enumerate() {
                    let name = if k == 0 { "classes.dex".to_string() } else { format!("classes{}.dex", k + 1) };
                    fs::write(sub.join(name), bytes)?;
                }
            }
            None => {}
        }
        if let Some(g) = &s.graph {
            let f = File::create(dir.join(GRAPH_DIR).join(format!("{}.{GRAPH_EXT}", s.id)))?;
            g.write_edge_list(BufWriter::new(f))?;
        }
    }
    Ok(())
}

/// Seeded stratified 70/30 split of an ingested corpus.
pub fn split_dataset(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Vec<&ApkSample>, Vec<&ApkSample>)> {
    let labels: Vec<Label> = data.samples.iter().map(|s| s.label).collect();
    let (tr, te) = stratified_split(&labels, test_fraction, seed)?;
    Ok((
        tr.iter().map(|&i| &data.samples[i]).collect(),
        te.iter().map(|&i| &data.samples[i]).collect(),
    ))
}

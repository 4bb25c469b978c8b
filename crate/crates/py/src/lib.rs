//! Python bindings: corpus synthesis, DEX imaging, graph measures, metrics
//! and the desk experiment.

use std::collections::BTreeMap;

use dmldroid_core::callgraph::{compute_centralities, detect_communities, modularity, CallGraph, DEFAULT_DAMPING};
use dmldroid_core::deximg::{encode_rgb_image, sections_of_files};
use dmldroid_core::harness::{run_experiment, synth_dataset, ExperimentConfig, MetricsReport, SyntheticConfig};
use dmldroid_core::robustness::shannon_entropy;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: dmldroid_core::Error) -> PyErr {
    match e {
        dmldroid_core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// SHA-256 digest of the synthetic corpus for `(seed, n_benign, n_malware)`.
#[pyfunction]
#[pyo3(signature = (seed=42, n_benign=250, n_malware=750))]
fn synth_digest(seed: u64, n_benign: usize, n_malware: usize) -> PyResult<String> {
    let cfg = SyntheticConfig {
        seed,
        n_benign,
        n_malware,
        ..SyntheticConfig::default()
    };
    Ok(synth_dataset(&cfg).map_err(to_py)?.digest())
}

/// Shannon entropy in bits per byte.
#[pyfunction]
fn entropy(data: &[u8]) -> f64 {
    shannon_entropy(data)
}

/// Section image of one or more DEX files: `(size, size, r, g, b)` with the
/// channels as bytes of the resized image.
#[pyfunction]
#[pyo3(signature = (files, width=256, size=64))]
fn dex_image(files: Vec<Vec<u8>>, width: usize, size: usize) -> PyResult<(usize, usize, Vec<u8>, Vec<u8>, Vec<u8>)> {
    let sections = sections_of_files(&files).map_err(to_py)?;
    let img = encode_rgb_image(&sections, width, size).map_err(to_py)?;
    let r = img.resized;
    Ok((r.height, r.width, r.red, r.green, r.blue))
}

/// The five centralities per node name for a `(caller, callee)` edge list.
#[pyfunction]
#[pyo3(signature = (edges, damping=DEFAULT_DAMPING))]
fn centralities(edges: Vec<(String, String)>, damping: f64) -> BTreeMap<String, [f64; 5]> {
    let g = CallGraph::from_edges(edges);
    let t = compute_centralities(&g, damping);
    (0..g.n_nodes())
        .map(|v| {
            let row = [t.out_degree[v], t.pagerank[v], t.betweenness[v], t.closeness[v], t.eigenvector[v]];
            (g.name(v).to_string(), row)
        })
        .collect()
}

/// Community per node name and the partition's modularity.
#[pyfunction]
#[pyo3(signature = (edges, resolution=1.0, seed=0))]
fn communities(edges: Vec<(String, String)>, resolution: f64, seed: u64) -> PyResult<(BTreeMap<String, usize>, f64)> {
    let g = CallGraph::from_edges(edges);
    let p = detect_communities(&g, resolution, seed);
    let q = modularity(&g, &p.assignment, resolution).map_err(to_py)?;
    let names = (0..g.n_nodes()).map(|v| (g.name(v).to_string(), p.assignment[v])).collect();
    Ok((names, q))
}

/// `(acc, pre, rec, f1)` with malware as the positive class.
#[pyfunction]
fn metrics(tp: usize, tn: usize, fp: usize, fn_: usize) -> PyResult<(f64, f64, f64, f64)> {
    let m = MetricsReport::from_counts(tp, tn, fp, fn_).map_err(to_py)?;
    Ok((m.acc, m.pre, m.rec, m.f1))
}

/// Runs the experiment on the synthetic corpus. `config` holds
/// `key = value` lines as in a CLI config file. Returns
/// `(scenario, model, acc, pre, rec, f1)` rows.
#[pyfunction]
#[pyo3(signature = (config=""))]
fn experiment(py: Python<'_>, config: &str) -> PyResult<Vec<(String, String, f64, f64, f64, f64)>> {
    let mut cfg = ExperimentConfig::default();
    cfg.parse_into(config).map_err(to_py)?;
    let report = py
        .detach(|| synth_dataset(&cfg.synth).and_then(|d| run_experiment(&d, &cfg)))
        .map_err(to_py)?;
    Ok(report
        .metrics
        .into_iter()
        .map(|m| (m.scenario, m.modality, m.acc, m.pre, m.rec, m.f1))
        .collect())
}

#[pymodule]
fn dmldroid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth_digest, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(dex_image, m)?)?;
    m.add_function(wrap_pyfunction!(centralities, m)?)?;
    m.add_function(wrap_pyfunction!(communities, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    Ok(())
}

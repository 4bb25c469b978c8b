use std::fs;
use std::path::PathBuf;

use dmldroid_core::harness::{
    ingest, layout_sources, split_dataset, synth_dataset, write_dataset, IngestFormat, SyntheticConfig,
};
use dmldroid_core::Label;

fn small(n_benign: usize, n_malware: usize) -> dmldroid_core::harness::Dataset {
    synth_dataset(&SyntheticConfig {
        n_benign,
        n_malware,
        multidex_p: 0.5,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

#[test]
fn ten_sample_fixture_joins_completely() {
    let dir = tempfile::tempdir().unwrap();
    let data = small(4, 6);
    write_dataset(&data, dir.path()).unwrap();
    let (back, report) = ingest(&layout_sources(dir.path())).unwrap();
    assert_eq!(back.len(), 10);
    assert!(report.unjoinable.is_empty() && report.missing.is_empty() && report.warnings.is_empty());
    assert_eq!(back.feature_names, data.feature_names);
    for (a, b) in data.samples.iter().zip(&back.samples) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.label, b.label);
        assert_eq!(a.tabular, b.tabular);
        assert_eq!(a.dex, b.dex, "{}", a.id);
        let ea: Vec<_> = a.graph.as_ref().unwrap().named_edges().collect();
        let eb: Vec<_> = b.graph.as_ref().unwrap().named_edges().collect();
        assert_eq!(ea, eb);
    }
    assert!(data.samples.iter().any(|s| s.dex.as_ref().unwrap().len() > 1), "fixture has no multidex sample");
}

#[test]
fn missing_and_unjoinable_are_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&small(3, 3), dir.path()).unwrap();
    let ids: Vec<String> = small(3, 3).samples.iter().map(|s| s.id.clone()).collect();
    fs::remove_file(dir.path().join("graphs").join(format!("{}.tsv", ids[0]))).unwrap();
    fs::write(dir.path().join("graphs/stray.tsv"), "a\tb\n").unwrap();
    let (data, report) = ingest(&layout_sources(dir.path())).unwrap();
    assert_eq!(data.len(), 6);
    assert_eq!(report.missing.get(&ids[0]), Some(&vec!["graph"]));
    assert_eq!(report.unjoinable, vec![("stray".to_string(), IngestFormat::GraphEdgelist)]);
    let mut text = Vec::new();
    report.write(&mut text).unwrap();
    assert!(String::from_utf8(text).unwrap().contains("unjoinable\tstray\tgraph-edgelist"));
}

#[test]
fn empty_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("dex");
    fs::create_dir(&empty).unwrap();
    let (data, report) = ingest(&[(IngestFormat::DexDir, empty)]).unwrap();
    assert_eq!(data.len(), 0);
    assert!(!report.warnings.is_empty());

    let csv: PathBuf = dir.path().join("t.csv");
    fs::write(&csv, "sha256,android.permission.INTERNET,label\n").unwrap();
    let (data, _) = ingest(&[(IngestFormat::TabularCsv, csv)]).unwrap();
    assert_eq!(data.len(), 0);
    assert_eq!(data.feature_names, vec!["android.permission.INTERNET"]);
}

#[test]
fn seventy_thirty_split() {
    let data = small(30, 70);
    let (train, test) = split_dataset(&data, 0.3, 4).unwrap();
    assert_eq!((train.len(), test.len()), (70, 30));
    let mal = test.iter().filter(|s| s.label == Label::Malware).count();
    assert_eq!(mal, 21);
    let (t2, _) = split_dataset(&data, 0.3, 4).unwrap();
    assert_eq!(
        train.iter().map(|s| &s.id).collect::<Vec<_>>(),
        t2.iter().map(|s| &s.id).collect::<Vec<_>>()
    );
}

/// Best depth-2 tree on TF bits by exhaustive search over root and child
/// splits, fit on the train split and scored on the test split.
#[test]
fn depth_two_tree_learns_default_corpus() {
    let data = synth_dataset(&SyntheticConfig::default()).unwrap();
    let (train, test) = split_dataset(&data, 0.2, 42).unwrap();
    let bits = |s: &dmldroid_core::ApkSample| s.tabular.clone().unwrap();
    let nf = data.feature_names.len();
    let majority = |rows: &[&dmldroid_core::ApkSample]| {
        let m = rows.iter().filter(|s| s.label.is_malware()).count();
        (2 * m >= rows.len(), m.max(rows.len() - m))
    };
    let mut best = (0, 0, [false; 4], 0usize);
    for r in 0..nf {
        let (lo, hi): (Vec<_>, Vec<_>) = train.iter().copied().partition(|s| bits(s)[r] == 0);
        let best_child = |part: &[&dmldroid_core::ApkSample]| {
            (0..nf)
                .map(|c| {
                    let (a, b): (Vec<_>, Vec<_>) = part.iter().copied().partition(|s| bits(s)[c] == 0);
                    let ((pa, ca), (pb, cb)) = (majority(&a), majority(&b));
                    (ca + cb, c, pa, pb)
                })
                .max_by_key(|t| (t.0, std::cmp::Reverse(t.1)))
                .unwrap()
        };
        let (cl, l, pl0, pl1) = best_child(&lo);
        let (ch, h, ph0, ph1) = best_child(&hi);
        if cl + ch > best.3 {
            best = (r, l * nf + h, [pl0, pl1, ph0, ph1], cl + ch);
        }
    }
    let (r, lh, leaves, _) = best;
    let (l, h) = (lh / nf, lh % nf);
    let correct = test
        .iter()
        .filter(|s| {
            let b = bits(s);
            let leaf = if b[r] == 0 { b[l] as usize } else { 2 + b[h] as usize };
            leaves[leaf] == s.label.is_malware()
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc >= 0.9, "depth-2 tree accuracy {acc}");
}

use std::fs::File;

use dmldroid_core::harness::{read_metrics_csv, run_experiment, synth_dataset, ExperimentConfig, MetricsRow};
use dmldroid_core::Error;

fn quick(models: &str, scenarios: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    for (k, v) in [
        ("n_benign", "40"),
        ("n_malware", "60"),
        ("epochs", "2"),
        ("attack_epochs", "3"),
        ("models", models),
        ("scenarios", scenarios),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

#[test]
fn plan_is_cartesian_and_deterministic() {
    let cfg = quick("U1,M5", "original,adversarial");
    let data = synth_dataset(&cfg.synth).unwrap();
    let a = run_experiment(&data, &cfg).unwrap();
    assert_eq!(a.metrics.len(), 4);
    let tags: Vec<(String, String)> = a.metrics.iter().map(|m| (m.modality.clone(), m.scenario.clone())).collect();
    assert_eq!(
        tags,
        [("U1", "original"), ("U1", "adversarial"), ("M5", "original"), ("M5", "adversarial")]
            .map(|(m, s)| (m.to_string(), s.to_string()))
    );
    for m in &a.metrics {
        assert_eq!(m.total(), 20);
        assert!((m.acc - (m.tp + m.tn) as f64 / 20.0).abs() < 1e-12);
    }
    assert!(a.evasion_rate.is_some());
    assert!(a.timing.iter().any(|t| t.model == "M5" && t.phase == "train"));

    let b = run_experiment(&data, &cfg).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.evasion_rate, b.evasion_rate);
}

#[test]
fn report_csv_round_trips() {
    let cfg = quick("U2,M1:tf+if", "original,enc");
    let data = synth_dataset(&cfg.synth).unwrap();
    let r = run_experiment(&data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let rows = read_metrics_csv(File::open(dir.path().join("metrics.csv")).unwrap()).unwrap();
    let expect: Vec<MetricsRow> = r.metrics.iter().map(MetricsRow::from).collect();
    assert_eq!(rows, expect);
    let timing = std::fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    assert!(timing.starts_with("model,phase,seconds\n"));
    assert!(timing.contains("M1:tf+if,train,"));
}

#[test]
fn unknown_scenario_is_configuration_error() {
    let mut c = ExperimentConfig::default();
    assert!(matches!(c.set("scenarios", "original,jitter"), Err(Error::Configuration(_))));
    assert!(matches!(c.set("models", "U1,Z9"), Err(Error::Configuration(_))));
}

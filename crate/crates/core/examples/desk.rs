//! Runs the default desk experiment and prints the metrics table.
//! Extra `key=value` arguments override the defaults.

use dmldroid_core::harness::{run_experiment, synth_dataset, ExperimentConfig};

fn main() -> dmldroid_core::Result<()> {
    env_logger::init();
    let mut cfg = ExperimentConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').unwrap_or((&arg, ""));
        cfg.set(k, v)?;
    }
    let data = synth_dataset(&cfg.synth)?;
    let t = std::time::Instant::now();
    let report = run_experiment(&data, &cfg)?;
    println!("{:<12} {:<8} {:>7} {:>7}", "scenario", "model", "acc", "f1");
    for m in &report.metrics {
        println!("{:<12} {:<8} {:>7.4} {:>7.4}", m.scenario, m.modality, m.acc, m.f1);
    }
    for r in &report.timing {
        println!("{:<8} {:<20} {:>8.2}s", r.model, r.phase, r.seconds);
    }
    println!("evasion {:?}  total {:.1}s", report.evasion_rate, t.elapsed().as_secs_f64());
    Ok(())
}

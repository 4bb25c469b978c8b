//! Synthetic corpus, ingestion, metrics and the experiment runner.

pub mod bundle;
pub mod config;
pub mod experiment;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use bundle::{ModelBundle, MODEL_FILE};
pub use config::ExperimentConfig;
pub use experiment::{
    attack_budget, build_detector, fit_generator, prepare, run_experiment, tf_blackbox, train_model, ExperimentReport,
    ModelName, Prepared, Scenario, TimingRow,
};
pub use ingest::{ingest, layout_sources, split_dataset, write_dataset, IngestFormat, IngestReport};
pub use metrics::{read_metrics_csv, render_f1_table, write_metrics_csv, MetricsReport, MetricsRow};
pub use pipeline::{stratified_split, PrepConfig, Preprocessor};
pub use synth::{synth_dataset, ClassProfile, Dataset, SyntheticConfig};

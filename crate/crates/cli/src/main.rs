//! `dmldroid`: synthetic corpora, ingestion, training, evaluation,
//! obfuscation, black-box attacks and experiment reports.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmldroid_core::deximg::{encode_rgb_image, sections_of_files};
use dmldroid_core::fusion::ModelInputs;
use dmldroid_core::harness::{
    fit_generator, ingest, layout_sources, prepare, read_metrics_csv, render_f1_table, run_experiment, split_dataset,
    synth_dataset, tf_blackbox, train_model, write_dataset, Dataset, ExperimentConfig, IngestFormat, MetricsReport,
    MetricsRow, ModelBundle, ModelName, Scenario,
};
use dmldroid_core::robustness::{obfuscate, perturb_many, ObfuscationMode, ObfuscationSpec};
use dmldroid_core::tabular::{read_tabular_csv, write_tabular_csv, BinaryFeatureMatrix};
use dmldroid_core::{ApkSample, Error, Label};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "dmldroid", version, about = "Multimodal Android malware detection toolkit")]
struct Cli {
    /// Line-oriented `key = value` experiment configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; also reseeds the synthetic corpus.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out_dir: PathBuf,
    /// Extra `key=value` override applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArg {
    /// Corpus directory (`tabular.csv`, `dex/`, `graphs/`); synthetic when omitted.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus in the ingestion layout.
    Synth {
        #[arg(long)]
        n_benign: Option<usize>,
        #[arg(long)]
        n_malware: Option<usize>,
    },
    /// Join fragments on sample id and write an ingest report and split.
    Ingest {
        /// Directory in the standard layout.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        tabular: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        dex_dir: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        graphs: Option<PathBuf>,
        /// Write PPM images and provenance PGMs for the first N samples.
        #[arg(long, default_value_t = 0)]
        dump_images: usize,
    },
    /// Train one configuration (U1..U3, M1..M5, or e.g. M5:tf+if) into a bundle.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "M5")]
        model: String,
    },
    /// Evaluate a bundle on its test split under the given scenarios.
    Eval {
        #[arg(long, value_name = "DIR")]
        bundle: PathBuf,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "original,rn,co,enc,mixed")]
        scenarios: String,
        /// AE CSV from `attack`, required for the adversarial scenario.
        #[arg(long, value_name = "CSV")]
        aes: Option<PathBuf>,
    },
    /// Apply an obfuscation simulator to every sample of a corpus.
    Obfuscate {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        mode: ObfuscationMode,
        #[arg(long)]
        junk_ratio: Option<f64>,
        #[arg(long)]
        indir_ratio: Option<f64>,
        #[arg(long)]
        enc_ratio: Option<f64>,
    },
    /// Train a black-box generator against a TF-only bundle and emit AEs.
    Attack {
        #[arg(long, value_name = "DIR")]
        target: PathBuf,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        allowed_df: Option<f64>,
        #[arg(long)]
        protected_df: Option<f64>,
        #[arg(long)]
        max_flips: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the configured plan and write metrics.csv, timing.csv and report.txt.
    Report {
        #[command(flatten)]
        data: DataArg,
        /// Only render an existing metrics.csv.
        #[arg(long, value_name = "CSV")]
        from: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_configuration() => 2,
        Error::Ingestion(_)
        | Error::Format(_)
        | Error::CorruptLayout { .. }
        | Error::ModalityMissing { .. }
        | Error::Vocabulary { .. }
        | Error::Degenerate(_)
        | Error::Io(_)
        | Error::Csv(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Configuration(format!("override `{o}` is not key=value")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(arg: &DataArg, cfg: &ExperimentConfig) -> Result<Dataset, Error> {
    match &arg.data {
        None => synth_dataset(&cfg.synth),
        Some(dir) => {
            let sources = layout_sources(dir);
            if sources.is_empty() {
                return Err(Error::Ingestion(format!("no corpus under {}", dir.display())));
            }
            let (data, report) = ingest(&sources)?;
            if !report.unjoinable.is_empty() || !report.missing.is_empty() {
                warn!(
                    "{} unjoinable ids, {} samples with missing modalities",
                    report.unjoinable.len(),
                    report.missing.len()
                );
            }
            Ok(data)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = config(&cli)?;
    let out = cli.out_dir.clone();
    fs::create_dir_all(&out)?;
    match cli.command {
        Command::Synth { n_benign, n_malware } => {
            let mut synth = cfg.synth.clone();
            synth.n_benign = n_benign.unwrap_or(synth.n_benign);
            synth.n_malware = n_malware.unwrap_or(synth.n_malware);
            let data = synth_dataset(&synth)?;
            write_dataset(&data, &out)?;
            fs::write(out.join("digest.txt"), data.digest() + "\n")?;
            println!("{} samples written to {} (digest {})", data.len(), out.display(), data.digest());
        }
        Command::Ingest {
            data,
            tabular,
            dex_dir,
            graphs,
            dump_images,
        } => {
            let mut sources = data.as_deref().map(layout_sources).unwrap_or_default();
            sources.extend(tabular.map(|p| (IngestFormat::TabularCsv, p)));
            sources.extend(dex_dir.map(|p| (IngestFormat::DexDir, p)));
            sources.extend(graphs.map(|p| (IngestFormat::GraphEdgelist, p)));
            if sources.is_empty() {
                return Err(Error::Configuration("ingest needs --data or a fragment path".into()));
            }
            let (ds, report) = ingest(&sources)?;
            report.write(create(&out.join("ingest_report.tsv"))?)?;
            let mut w = create(&out.join("split.tsv"))?;
            if !ds.samples.is_empty() {
                let (train, test) = split_dataset(&ds, 0.3, cfg.seed)?;
                for (part, set) in [("train", &train), ("test", &test)] {
                    for s in set.iter() {
                        writeln!(w, "{}\t{part}", s.id)?;
                    }
                }
            }
            w.flush()?;
            dump(&ds, dump_images, &cfg, &out)?;
            println!(
                "{} samples, {} unjoinable ids, {} with missing modalities",
                ds.len(),
                report.unjoinable.len(),
                report.missing.len()
            );
        }
        Command::Train { data, model } => {
            let name: ModelName = model.parse()?;
            let ds = load_data(&data, &cfg)?;
            let p = prepare(&ds, &cfg)?;
            let trained = train_model(&name, &p, &cfg)?;
            let mut w = create(&out.join("train_log.csv"))?;
            writeln!(w, "epoch,mean_loss")?;
            for e in &trained.log.epochs {
                writeln!(w, "{},{}", e.epoch, e.mean_loss)?;
            }
            w.flush()?;
            let mut k = create(&out.join("keyapis.csv"))?;
            writeln!(k, "api,score")?;
            for (api, score) in &p.prep.keys.entries {
                writeln!(k, "{api},{score}")?;
            }
            k.flush()?;
            let extra = BTreeMap::from([
                ("plan_name".to_string(), name.to_string()),
                ("split.seed".to_string(), cfg.seed.to_string()),
                ("split.test_fraction".to_string(), cfg.test_fraction.to_string()),
            ]);
            ModelBundle {
                model: trained,
                prep: p.prep,
                extra,
            }
            .save(&out)?;
            println!("{name} trained on {} samples; bundle in {}", p.train.len(), out.display());
        }
        Command::Eval {
            bundle,
            data,
            scenarios,
            aes,
        } => {
            let b = ModelBundle::load(&bundle)?;
            let ds = load_data(&data, &cfg)?;
            let test = bundle_split(&b, &ds)?.1;
            let labels: Vec<bool> = test.iter().map(|s| s.label.is_malware()).collect();
            let name = b.extra.get("plan_name").cloned().unwrap_or_else(|| b.model.detector.name());
            let mut rows = Vec::new();
            for sc in scenarios.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let sc: Scenario = sc.parse()?;
                let inputs = scenario_inputs(&b, &test, sc, aes.as_deref(), &cfg)?;
                let preds = b.model.detector.predict(&b.model.store, &inputs)?;
                let m = MetricsReport::from_predictions(&preds, &labels)?.tagged(&sc.to_string(), &name);
                println!("{name} {sc}: acc {:.4} pre {:.4} rec {:.4} f1 {:.4}", m.acc, m.pre, m.rec, m.f1);
                rows.push(m);
            }
            dmldroid_core::harness::write_metrics_csv(create(&out.join("metrics.csv"))?, &rows)?;
        }
        Command::Obfuscate {
            data,
            mode,
            junk_ratio,
            indir_ratio,
            enc_ratio,
        } => {
            let ds = load_data(&data, &cfg)?;
            let spec = ObfuscationSpec {
                junk_ratio: junk_ratio.unwrap_or(cfg.junk_ratio),
                indirection_ratio: indir_ratio.unwrap_or(cfg.indirection_ratio),
                encryption_ratio: enc_ratio.unwrap_or(cfg.encryption_ratio),
                ..ObfuscationSpec::new(mode, cfg.seed)
            };
            spec.validate()?;
            let samples = ds.samples.iter().map(|s| obfuscate(s, &spec)).collect::<Result<Vec<_>, _>>()?;
            let obf = Dataset {
                samples,
                feature_names: ds.feature_names.clone(),
            };
            write_dataset(&obf, &out)?;
            println!("{} samples obfuscated ({}) into {}", obf.len(), mode.tag(), out.display());
        }
        Command::Attack {
            target,
            data,
            allowed_df,
            protected_df,
            max_flips,
            epochs,
        } => {
            let mut cfg = cfg;
            cfg.attack_allowed_df = allowed_df.unwrap_or(cfg.attack_allowed_df);
            cfg.attack_protected_df = protected_df.unwrap_or(cfg.attack_protected_df);
            cfg.attack_max_flips = max_flips.unwrap_or(cfg.attack_max_flips);
            cfg.attack.epochs = epochs.unwrap_or(cfg.attack.epochs);
            cfg.validate()?;
            let b = ModelBundle::load(&target)?;
            if !b.is_tf_only() {
                return Err(Error::Configuration(format!(
                    "attack target must be a TF-only model, {} reads {:?}",
                    target.display(),
                    b.model.detector.modalities()
                )));
            }
            let ds = load_data(&data, &cfg)?;
            let (train, test) = bundle_split(&b, &ds)?;
            let gen = fit_generator(&b.model, &b.prep, &train, &cfg)?;
            let mut w = create(&out.join("attack_log.csv"))?;
            writeln!(w, "epoch,generator_loss,substitute_loss,evasion_rate")?;
            for e in &gen.log {
                writeln!(w, "{},{},{},{}", e.epoch, e.generator_loss, e.substitute_loss, e.evasion_rate)?;
            }
            w.flush()?;
            let mal: Vec<&ApkSample> = test.iter().copied().filter(|s| s.label.is_malware()).collect();
            let rows: Vec<Vec<u8>> = mal
                .iter()
                .map(|s| {
                    s.tabular.clone().ok_or_else(|| Error::ModalityMissing {
                        sample: s.id.clone(),
                        modality: "tabular",
                    })
                })
                .collect::<Result<_, _>>()?;
            let ae = perturb_many(&gen, &rows, cfg.seed ^ 0xAE)?;
            let verdicts = tf_blackbox(&b.model, &b.prep)(&ae)?;
            let evaded = verdicts.iter().filter(|&&v| !v).count();
            let m = BinaryFeatureMatrix::new(
                mal.iter().map(|s| format!("ae-{}", s.id)).collect(),
                b.prep.feature_names.clone(),
                ae.into_iter().flatten().collect(),
            )?;
            let origins: Vec<String> = mal.iter().map(|s| s.id.clone()).collect();
            write_tabular_csv(create(&out.join("aes.csv"))?, &m, &vec![Label::Malware; mal.len()], Some(&origins))?;
            println!("{} AEs written; {evaded} evade the target", mal.len());
        }
        Command::Report { data, from } => {
            let rows: Vec<MetricsRow> = match from {
                Some(p) => read_metrics_csv(BufReader::new(File::open(&p)?))?,
                None => {
                    let ds = load_data(&data, &cfg)?;
                    let r = run_experiment(&ds, &cfg)?;
                    r.write(&out)?;
                    if let Some(e) = r.evasion_rate {
                        info!("U1 evasion rate on the adversarial test set: {e:.3}");
                    }
                    r.metrics.iter().map(MetricsRow::from).collect()
                }
            };
            let table = render_f1_table(&rows);
            fs::write(out.join("report.txt"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

/// The train/test split recorded in the bundle at training time.
fn bundle_split<'a>(b: &ModelBundle, ds: &'a Dataset) -> Result<(Vec<&'a ApkSample>, Vec<&'a ApkSample>), Error> {
    let get = |k: &str, default: &str| b.extra.get(k).cloned().unwrap_or_else(|| default.to_string());
    let seed: u64 = get("split.seed", "42")
        .parse()
        .map_err(|_| Error::Format("bundle split seed".into()))?;
    let frac: f64 = get("split.test_fraction", "0.2")
        .parse()
        .map_err(|_| Error::Format("bundle split fraction".into()))?;
    split_dataset(ds, frac, seed)
}

fn scenario_inputs(
    b: &ModelBundle,
    test: &[&ApkSample],
    sc: Scenario,
    aes: Option<&Path>,
    cfg: &ExperimentConfig,
) -> Result<ModelInputs, Error> {
    match sc {
        Scenario::Original => b.prep.transform(test),
        Scenario::Obfuscated(mode) => {
            let spec = ObfuscationSpec {
                junk_ratio: cfg.junk_ratio,
                indirection_ratio: cfg.indirection_ratio,
                encryption_ratio: cfg.encryption_ratio,
                ..ObfuscationSpec::new(mode, cfg.seed)
            };
            let obf = test.iter().map(|s| obfuscate(s, &spec)).collect::<Result<Vec<_>, _>>()?;
            b.prep.transform(&obf.iter().collect::<Vec<_>>())
        }
        Scenario::Adversarial => {
            let path = aes.ok_or_else(|| Error::Configuration("adversarial scenario needs --aes".into()))?;
            let csv = read_tabular_csv(BufReader::new(File::open(path)?))?;
            let origins = csv
                .origin_ids
                .ok_or_else(|| Error::Ingestion("AE CSV lacks an origin_id column".into()))?;
            let m = csv.matrix.align(&b.prep.feature_names);
            let by_origin: BTreeMap<&str, usize> = origins.iter().enumerate().map(|(i, o)| (o.as_str(), i)).collect();
            let swapped: Vec<ApkSample> = test
                .iter()
                .map(|s| {
                    let mut s = (*s).clone();
                    if let Some(&i) = by_origin.get(s.id.as_str()) {
                        s.tabular = Some(m.row(i).to_vec());
                    }
                    s
                })
                .collect();
            b.prep.transform(&swapped.iter().collect::<Vec<_>>())
        }
    }
}

fn dump(ds: &Dataset, n: usize, cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    if n == 0 {
        return Ok(());
    }
    let dir = out.join("images");
    fs::create_dir_all(&dir)?;
    for s in ds.samples.iter().filter(|s| s.dex.is_some()).take(n) {
        let sections = sections_of_files(s.dex.as_ref().expect("filtered"))?;
        let img = encode_rgb_image(&sections, cfg.prep.image_width, cfg.prep.image_size)?;
        img.resized.write_ppm(create(&dir.join(format!("{}.ppm", s.id)))?)?;
        img.full().write_ppm(create(&dir.join(format!("{}.full.ppm", s.id)))?)?;
        img.write_provenance_pgm(create(&dir.join(format!("{}.prov.pgm", s.id)))?)?;
    }
    Ok(())
}

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::info;

use super::config::ExperimentConfig;
use super::metrics::{write_metrics_csv, MetricsReport};
use super::pipeline::{stratified_split, Preprocessor};
use super::synth::Dataset;
use crate::deximg::ImageEncoder;
use crate::error::{Error, Result};
use crate::fusion::{train, Architecture, Detector, FusionHead, Modality, ModelInputs, Strategy, TrainedModel};
use crate::robustness::{
    obfuscate, perturb_many, train_adversarial_generator, AdversarialGenerator, AttackBudget, AttackHyper, ObfuscationMode,
    ObfuscationSpec,
};
use crate::sample::ApkSample;
use crate::seqenc::SequenceEncoder;
use crate::tabular::{BinaryFeatureMatrix, TabularEncoder};

/// A configuration in the experiment plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelName {
    /// U1 (TF), U2 (IF), U3 (GSF).
    Unimodal(Modality),
    /// M1..M5 over the listed modalities (all three unless bimodal).
    Fusion(Strategy, Vec<Modality>),
}

impl ModelName {
    pub fn modalities(&self) -> Vec<Modality> {
        match self {
            ModelName::Unimodal(m) => vec![*m],
            ModelName::Fusion(_, m) => m.clone(),
        }
    }
}

fn strategy_index(s: Strategy) -> usize {
    Strategy::ALL.iter().position(|&x| x == s).expect("listed") + 1
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelName::Unimodal(m) => write!(f, "U{}", Modality::ALL.iter().position(|x| x == m).expect("listed") + 1),
            ModelName::Fusion(s, mods) if mods.len() == 3 => write!(f, "M{}", strategy_index(*s)),
            ModelName::Fusion(s, mods) => write!(
                f,
                "M{}:{}",
                strategy_index(*s),
                mods.iter().map(|m| m.tag()).collect::<Vec<_>>().join("+")
            ),
        }
    }
}

impl FromStr for ModelName {
    type Err = Error;
    /// `U1`..`U3`, `M1`..`M5`, or a bimodal `M5:tf+if`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Configuration(format!("unknown model `{s}`"));
        let (head, mods) = match s.split_once(':') {
            Some((h, m)) => (h, Some(m)),
            None => (s, None),
        };
        let k: usize = head.get(1..).and_then(|d| d.parse().ok()).ok_or_else(bad)?;
        match (head.chars().next().map(|c| c.to_ascii_uppercase()), mods) {
            (Some('U'), None) if (1..=3).contains(&k) => Ok(ModelName::Unimodal(Modality::ALL[k - 1])),
            (Some('M'), _) if (1..=5).contains(&k) => {
                let mods = match mods {
                    None => Modality::ALL.to_vec(),
                    Some(m) => {
                        let mut v: Vec<Modality> = m.split('+').map(str::parse).collect::<Result<_>>()?;
                        v.sort();
                        v.dedup();
                        if v.len() < 2 {
                            return Err(bad());
                        }
                        v
                    }
                };
                Ok(ModelName::Fusion(Strategy::ALL[k - 1], mods))
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Original,
    Obfuscated(ObfuscationMode),
    Adversarial,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Original => f.write_str("original"),
            Scenario::Obfuscated(m) => f.write_str(m.tag()),
            Scenario::Adversarial => f.write_str("adversarial"),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Scenario::Original),
            "adversarial" => Ok(Scenario::Adversarial),
            other => other
                .parse::<ObfuscationMode>()
                .map(Scenario::Obfuscated)
                .map_err(|_| Error::Configuration(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub model: String,
    pub phase: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    pub metrics: Vec<MetricsReport>,
    pub timing: Vec<TimingRow>,
    /// Black-box evasion rate of the adversarial test set against U1.
    pub evasion_rate: Option<f64>,
    pub dataset_digest: String,
}

impl ExperimentReport {
    pub fn get(&self, scenario: &str, model: &str) -> Option<&MetricsReport> {
        self.metrics.iter().find(|m| m.scenario == scenario && m.modality == model)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_metrics_csv(BufWriter::new(File::create(dir.join("metrics.csv"))?), &self.metrics)?;
        let mut w = BufWriter::new(File::create(dir.join("timing.csv"))?);
        writeln!(w, "model,phase,seconds")?;
        for t in &self.timing {
            writeln!(w, "{},{},{:.3}", t.model, t.phase, t.seconds)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Encoders and head for a plan entry at the configured desk widths.
pub fn build_detector(name: &ModelName, cfg: &ExperimentConfig, d_in: usize, vocab: usize) -> Result<Detector> {
    let mut tabular = TabularEncoder::new(d_in);
    tabular.hidden = cfg.tf_hidden;
    tabular.dropout = cfg.tf_dropout;
    let image = ImageEncoder::new(cfg.if_channels, cfg.prep.image_size);
    let seq = SequenceEncoder::new(cfg.gsf.clone(), vocab)?;
    let arch = match name {
        ModelName::Unimodal(m) => Architecture::Unimodal(*m),
        ModelName::Fusion(s, mods) => Architecture::Fused(FusionHead::new(*s, mods)?.with_heads(cfg.fusion_heads)),
    };
    Ok(Detector {
        arch,
        tabular,
        image,
        seq,
    })
}

fn labels_of(samples: &[&ApkSample]) -> Vec<bool> {
    samples.iter().map(|s| s.label.is_malware()).collect()
}

fn evaluate(model: &TrainedModel, inputs: &ModelInputs, labels: &[bool]) -> Result<MetricsReport> {
    MetricsReport::from_predictions(&model.detector.predict(&model.store, inputs)?, labels)
}

/// Fitted preprocessing plus the prepared train split.
pub struct Prepared<'a> {
    pub prep: Preprocessor,
    pub train: Vec<&'a ApkSample>,
    pub test: Vec<&'a ApkSample>,
    pub train_inputs: ModelInputs,
    pub train_labels: Vec<bool>,
}

pub fn prepare<'a>(data: &'a Dataset, cfg: &ExperimentConfig) -> Result<Prepared<'a>> {
    let labels: Vec<_> = data.samples.iter().map(|s| s.label).collect();
    let (tr, te) = stratified_split(&labels, cfg.test_fraction, cfg.seed)?;
    let train: Vec<&ApkSample> = tr.iter().map(|&i| &data.samples[i]).collect();
    let test: Vec<&ApkSample> = te.iter().map(|&i| &data.samples[i]).collect();
    let prep = Preprocessor::fit(&train, &data.feature_names, cfg.prep.clone())?;
    info!(
        "prepared: {} train / {} test, PCA d = {}, {} key APIs, vocab {}",
        train.len(),
        test.len(),
        prep.pca.n_components(),
        prep.keys.len(),
        prep.vocab.len()
    );
    let train_inputs = prep.transform(&train)?;
    let train_labels = labels_of(&train);
    Ok(Prepared {
        prep,
        train,
        test,
        train_inputs,
        train_labels,
    })
}

pub fn train_model(name: &ModelName, p: &Prepared, cfg: &ExperimentConfig) -> Result<TrainedModel> {
    let det = build_detector(name, cfg, p.prep.pca.n_components(), p.prep.vocab.len())?;
    train(&det, &p.train_inputs, &p.train_labels, &cfg.hyper, cfg.seed, None)
}

/// Black-box verdicts of a TF-only model on raw bit rows.
pub fn tf_blackbox<'m>(model: &'m TrainedModel, prep: &'m Preprocessor) -> impl Fn(&[Vec<u8>]) -> Result<Vec<bool>> + 'm {
    move |rows: &[Vec<u8>]| {
        let inputs = ModelInputs {
            tf: Some(prep.tf_rows(rows)?),
            ..Default::default()
        };
        model.detector.predict(&model.store, &inputs)
    }
}

/// Allowed/protected sets from the document frequencies of `train`.
pub fn attack_budget(train: &[&ApkSample], feature_names: &[String], cfg: &ExperimentConfig) -> Result<AttackBudget> {
    let rows: Vec<u8> = train.iter().flat_map(|s| s.tabular.clone().unwrap_or_default()).collect();
    let m = BinaryFeatureMatrix::new(
        train.iter().map(|s| s.id.clone()).collect(),
        feature_names.to_vec(),
        rows,
    )?;
    AttackBudget::from_corpus(
        &m,
        &labels_of(train),
        cfg.attack_allowed_df,
        cfg.attack_protected_df,
        cfg.attack_benign_max,
        cfg.attack_max_flips,
    )
}

/// Trains the generator against the TF-only `target` on `train` rows.
pub fn fit_generator(
    target: &TrainedModel,
    prep: &Preprocessor,
    train: &[&ApkSample],
    cfg: &ExperimentConfig,
) -> Result<AdversarialGenerator> {
    let budget = attack_budget(train, &prep.feature_names, cfg)?;
    let rows = |malware: bool| -> Vec<Vec<u8>> {
        train
            .iter()
            .filter(|s| s.label.is_malware() == malware)
            .filter_map(|s| s.tabular.clone())
            .collect()
    };
    let bb = tf_blackbox(target, prep);
    let hyper = AttackHyper {
        seed: cfg.seed,
        ..cfg.attack.clone()
    };
    train_adversarial_generator(&bb, &rows(true), &rows(false), &budget, &hyper)
}

/// Trains each plan entry once and evaluates it on every scenario.
pub fn run_experiment(data: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let models: Vec<ModelName> = cfg.models.clone();
    let scenarios: Vec<Scenario> = cfg.scenarios.clone();
    let mut report = ExperimentReport {
        dataset_digest: data.digest(),
        ..Default::default()
    };
    let t0 = Instant::now();
    let p = prepare(data, cfg)?;
    report.timing.push(TimingRow {
        model: "-".into(),
        phase: "prepare".into(),
        seconds: t0.elapsed().as_secs_f64(),
    });
    let test_labels = labels_of(&p.test);

    let mut scenario_inputs: BTreeMap<String, ModelInputs> = BTreeMap::new();
    let original = p.prep.transform(&p.test)?;
    for sc in &scenarios {
        if let Scenario::Obfuscated(mode) = sc {
            let t = Instant::now();
            let mut spec = ObfuscationSpec::new(*mode, cfg.seed);
            spec.junk_ratio = cfg.junk_ratio;
            spec.indirection_ratio = cfg.indirection_ratio;
            spec.encryption_ratio = cfg.encryption_ratio;
            let obf: Vec<ApkSample> = p.test.iter().map(|s| obfuscate(s, &spec)).collect::<Result<_>>()?;
            let refs: Vec<&ApkSample> = obf.iter().collect();
            scenario_inputs.insert(sc.to_string(), p.prep.transform(&refs)?);
            report.timing.push(TimingRow {
                model: "-".into(),
                phase: format!("obfuscate:{sc}"),
                seconds: t.elapsed().as_secs_f64(),
            });
        }
    }
    scenario_inputs.insert(Scenario::Original.to_string(), original.clone());

    let mut trained: Vec<(ModelName, TrainedModel)> = Vec::new();
    let u1 = ModelName::Unimodal(Modality::Tf);
    for name in &models {
        let t = Instant::now();
        let model = train_model(name, &p, cfg)?;
        report.timing.push(TimingRow {
            model: name.to_string(),
            phase: "train".into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        trained.push((name.clone(), model));
    }

    if scenarios.contains(&Scenario::Adversarial) {
        let t = Instant::now();
        let target = match trained.iter().find(|(n, _)| *n == u1) {
            Some((_, m)) => m.clone(),
            None => train_model(&u1, &p, cfg)?,
        };
        let gen = fit_generator(&target, &p.prep, &p.train, cfg)?;
        let mal_idx: Vec<usize> = (0..p.test.len()).filter(|&i| test_labels[i]).collect();
        let mal_rows: Vec<Vec<u8>> = mal_idx.iter().map(|&i| p.test[i].tabular.clone().unwrap_or_default()).collect();
        let aes = perturb_many(&gen, &mal_rows, cfg.seed ^ 0xAE)?;
        let mut rows: Vec<Vec<u8>> = p.test.iter().map(|s| s.tabular.clone().unwrap_or_default()).collect();
        for (&i, ae) in mal_idx.iter().zip(aes) {
            rows[i] = ae;
        }
        let verdicts = tf_blackbox(&target, &p.prep)(&mal_idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>())?;
        report.evasion_rate = Some(verdicts.iter().filter(|&&v| !v).count() as f64 / verdicts.len().max(1) as f64);
        let mut adv = original.clone();
        adv.tf = Some(p.prep.tf_rows(&rows)?);
        scenario_inputs.insert(Scenario::Adversarial.to_string(), adv);
        report.timing.push(TimingRow {
            model: u1.to_string(),
            phase: "attack".into(),
            seconds: t.elapsed().as_secs_f64(),
        });
    }

    for (name, model) in &trained {
        for sc in &scenarios {
            let t = Instant::now();
            let inputs = &scenario_inputs[&sc.to_string()];
            let m = evaluate(model, inputs, &test_labels)?.tagged(&sc.to_string(), &name.to_string());
            info!("{name} {sc}: acc {:.4} f1 {:.4}", m.acc, m.f1);
            report.metrics.push(m);
            report.timing.push(TimingRow {
                model: name.to_string(),
                phase: format!("test:{sc}"),
                seconds: t.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(report)
}

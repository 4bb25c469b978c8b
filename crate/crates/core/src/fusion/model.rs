use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::RngCore;

use super::strategy::{FusionHead, Modality, Strategy};
use crate::deximg::ImageEncoder;
use crate::error::{Error, Result};
use crate::harness::metrics::MetricsReport;
use crate::nnkit::init::seeded;
use crate::nnkit::layers::Ctx;
use crate::nnkit::{adamw_step, OptimHyper, ParamStore, RealMatrix, Tape, Tensor, Var};
use crate::seqenc::{EncodedSeq, EncoderConfig, SequenceEncoder};
use crate::tabular::TabularEncoder;

use super::bundle::ModalityBundle;

const EVAL_BATCH: usize = 64;

/// Images stacked as `N × 3 × side × side`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pub side: usize,
    pub data: Vec<f64>,
}

impl ImageBatch {
    pub fn from_tensors(images: &[Tensor]) -> Result<Self> {
        let side = images.first().map_or(0, |t| t.shape.get(1).copied().unwrap_or(0));
        let mut data = Vec::with_capacity(images.len() * 3 * side * side);
        for t in images {
            if t.shape != [3, side, side] {
                return Err(Error::dim("ImageBatch", &[3, side, side], &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self { side, data })
    }

    fn plane(&self) -> usize {
        3 * self.side * self.side
    }

    pub fn len(&self) -> usize {
        if self.side == 0 {
            0
        } else {
            self.data.len() / self.plane()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Tensor {
        let p = self.plane();
        let mut data = Vec::with_capacity(idx.len() * p);
        for &i in idx {
            data.extend_from_slice(&self.data[i * p..(i + 1) * p]);
        }
        Tensor {
            shape: vec![idx.len(), 3, self.side, self.side],
            data,
        }
    }
}

/// Encoder-ready inputs for N samples: PCA rows, section images, token ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelInputs {
    pub tf: Option<RealMatrix>,
    pub images: Option<ImageBatch>,
    pub seqs: Option<Vec<EncodedSeq>>,
}

impl ModelInputs {
    pub fn len(&self) -> usize {
        self.tf
            .as_ref()
            .map(RealMatrix::rows)
            .or(self.images.as_ref().map(ImageBatch::len))
            .or(self.seqs.as_ref().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has(&self, m: Modality) -> bool {
        match m {
            Modality::Tf => self.tf.is_some(),
            Modality::If => self.images.is_some(),
            Modality::Gsf => self.seqs.is_some(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> ModelInputs {
        ModelInputs {
            tf: self.tf.as_ref().map(|m| m.select_rows(idx)),
            images: self.images.as_ref().map(|b| {
                let t = b.select(idx);
                ImageBatch { side: b.side, data: t.data }
            }),
            seqs: self.seqs.as_ref().map(|s| idx.iter().map(|&i| s[i].clone()).collect()),
        }
    }

    fn check(&self, mods: &[Modality]) -> Result<usize> {
        let n = self.len();
        for &m in mods {
            let len = match m {
                Modality::Tf => self.tf.as_ref().map(RealMatrix::rows),
                Modality::If => self.images.as_ref().map(ImageBatch::len),
                Modality::Gsf => self.seqs.as_ref().map(Vec::len),
            };
            match len {
                None => {
                    return Err(Error::ModalityMissing {
                        sample: "<batch>".into(),
                        modality: m.tag(),
                    })
                }
                Some(l) if l != n => return Err(Error::dim("ModelInputs", &[n], &[l])),
                _ => {}
            }
        }
        Ok(n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    /// A single encoder with its own logit layer (U1–U3).
    Unimodal(Modality),
    /// Encoders for the head's modalities, fused, then classified.
    Fused(FusionHead),
}

/// Encoders plus either a unimodal or a fused classification path.
#[derive(Clone, Debug, PartialEq)]
pub struct Detector {
    pub arch: Architecture,
    pub tabular: TabularEncoder,
    pub image: ImageEncoder,
    pub seq: SequenceEncoder,
}

impl Detector {
    pub fn modalities(&self) -> Vec<Modality> {
        match &self.arch {
            Architecture::Unimodal(m) => vec![*m],
            Architecture::Fused(h) => h.modalities.clone(),
        }
    }

    pub fn name(&self) -> String {
        match &self.arch {
            Architecture::Unimodal(m) => m.tag().to_string(),
            Architecture::Fused(h) => format!(
                "{}[{}]",
                h.strategy,
                h.modalities.iter().map(|m| m.tag()).collect::<Vec<_>>().join("+")
            ),
        }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) -> Result<()> {
        // Each component draws from its own stream so that adding a modality
        // does not reshuffle the others' initial weights.
        for m in self.modalities() {
            let mut rng = seeded(seed ^ (0x5EED_0000 + m as u64));
            match m {
                Modality::Tf => self.tabular.init(store, &mut rng),
                Modality::If => self.image.init(store, &mut rng)?,
                Modality::Gsf => self.seq.init(store, &mut rng)?,
            }
        }
        if let Architecture::Fused(h) = &self.arch {
            h.init(store, &mut seeded(seed ^ 0xF05E))?;
        }
        Ok(())
    }

    fn encode(
        &self,
        m: Modality,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &ModelInputs,
        idx: &[usize],
        ctx: &mut Ctx,
    ) -> Result<(Var, Var)> {
        match m {
            Modality::Tf => {
                let x = tape.leaf(inputs.tf.as_ref().expect("checked").select_rows(idx).into());
                self.tabular.forward(tape, store, x, ctx)
            }
            Modality::If => {
                let x = tape.leaf(inputs.images.as_ref().expect("checked").select(idx));
                self.image.forward(tape, store, x, ctx)
            }
            Modality::Gsf => {
                let seqs = inputs.seqs.as_ref().expect("checked");
                let batch: Vec<&EncodedSeq> = idx.iter().map(|&i| &seqs[i]).collect();
                self.seq.forward(tape, store, &batch, ctx)
            }
        }
    }

    /// Logits (`B × 1`) for the samples at `idx`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &ModelInputs,
        idx: &[usize],
        ctx: &mut Ctx,
    ) -> Result<Var> {
        inputs.check(&self.modalities())?;
        match &self.arch {
            Architecture::Unimodal(m) => Ok(self.encode(*m, tape, store, inputs, idx, ctx)?.1),
            Architecture::Fused(h) => {
                let mut embs = Vec::with_capacity(h.modalities.len());
                for &m in &h.modalities {
                    embs.push(self.encode(m, tape, store, inputs, idx, ctx)?.0);
                }
                Ok(h.forward(tape, store, &embs)?.1)
            }
        }
    }

    /// Evaluation-mode logits for every sample.
    pub fn logits(&self, store: &ParamStore, inputs: &ModelInputs) -> Result<Vec<f64>> {
        let n = inputs.check(&self.modalities())?;
        let mut out = Vec::with_capacity(n);
        let all: Vec<usize> = (0..n).collect();
        for chunk in all.chunks(EVAL_BATCH) {
            let mut tape = Tape::new();
            let z = self.forward(&mut tape, store, inputs, chunk, &mut Ctx::eval())?;
            out.extend_from_slice(&tape.value(z).data);
        }
        Ok(out)
    }

    pub fn predict(&self, store: &ParamStore, inputs: &ModelInputs) -> Result<Vec<bool>> {
        Ok(self.logits(store, inputs)?.into_iter().map(super::predict).collect())
    }

    /// Evaluation-mode 128-d embeddings for the detector's modalities.
    pub fn embeddings(&self, store: &ParamStore, inputs: &ModelInputs) -> Result<ModalityBundle> {
        let n = inputs.check(&self.modalities())?;
        let mut bundle = ModalityBundle::default();
        for m in self.modalities() {
            let mut rows = Vec::with_capacity(n);
            let all: Vec<usize> = (0..n).collect();
            for chunk in all.chunks(EVAL_BATCH) {
                let mut tape = Tape::new();
                let (e, _) = self.encode(m, &mut tape, store, inputs, chunk, &mut Ctx::eval())?;
                let v = tape.value(e);
                rows.extend(v.data.chunks(v.last_dim()).map(<[f64]>::to_vec));
            }
            bundle.set(m, RealMatrix::from_rows(&rows)?);
        }
        Ok(bundle)
    }

    pub fn manifest(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        match &self.arch {
            Architecture::Unimodal(x) => {
                put("arch", "unimodal".into());
                put("modalities", x.tag().into());
            }
            Architecture::Fused(h) => {
                put("arch", "fused".into());
                put("strategy", h.strategy.tag().into());
                put("modalities", h.modalities.iter().map(|m| m.tag()).collect::<Vec<_>>().join(","));
                put("heads", h.heads.to_string());
                put("d_fusion", h.d_fusion.to_string());
            }
        }
        put("tf.d_in", self.tabular.d_in.to_string());
        put("tf.hidden", format!("{},{}", self.tabular.hidden[0], self.tabular.hidden[1]));
        put("tf.dropout", self.tabular.dropout.to_string());
        put("if.channels", format!("{},{}", self.image.channels[0], self.image.channels[1]));
        put("if.in_size", self.image.in_size.to_string());
        let c = &self.seq.cfg;
        put("gsf.vocab", self.seq.vocab_size.to_string());
        put("gsf.layers", c.layers.to_string());
        put("gsf.heads", c.heads.to_string());
        put("gsf.hidden", c.hidden.to_string());
        put("gsf.ff_hidden", c.ff_hidden.to_string());
        put("gsf.max_len", c.max_len.to_string());
        put("gsf.dropout", c.dropout.to_string());
        m
    }

    pub fn from_manifest(m: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            m.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("manifest lacks `{k}`")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("manifest `{k}` = `{v}`")))
        }
        let pair = |k: &str| -> Result<[usize; 2]> {
            let v = get(k)?;
            let parts: Vec<usize> = v.split(',').map(|p| num(k, p)).collect::<Result<_>>()?;
            parts.try_into().map_err(|_| Error::Format(format!("manifest `{k}` = `{v}`")))
        };
        let modalities: Vec<Modality> = get("modalities")?.split(',').map(str::parse).collect::<Result<_>>()?;
        let arch = match get("arch")? {
            "unimodal" => Architecture::Unimodal(modalities[0]),
            "fused" => {
                let strategy: Strategy = get("strategy")?.parse()?;
                let heads = num("heads", get("heads")?)?;
                let d_fusion = num("d_fusion", get("d_fusion")?)?;
                Architecture::Fused(
                    FusionHead::new(strategy, &modalities)?
                        .with_heads(heads)
                        .with_d_fusion(d_fusion),
                )
            }
            other => return Err(Error::Format(format!("manifest arch `{other}`"))),
        };
        let mut tabular = TabularEncoder::new(num("tf.d_in", get("tf.d_in")?)?);
        tabular.hidden = pair("tf.hidden")?;
        tabular.dropout = num("tf.dropout", get("tf.dropout")?)?;
        let image = ImageEncoder::new(pair("if.channels")?, num("if.in_size", get("if.in_size")?)?);
        let cfg = EncoderConfig {
            layers: num("gsf.layers", get("gsf.layers")?)?,
            heads: num("gsf.heads", get("gsf.heads")?)?,
            hidden: num("gsf.hidden", get("gsf.hidden")?)?,
            ff_hidden: num("gsf.ff_hidden", get("gsf.ff_hidden")?)?,
            max_len: num("gsf.max_len", get("gsf.max_len")?)?,
            dropout: num("gsf.dropout", get("gsf.dropout")?)?,
        };
        let seq = SequenceEncoder::new(cfg, num("gsf.vocab", get("gsf.vocab")?)?)?;
        Ok(Self {
            arch,
            tabular,
            image,
            seq,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batch_losses: Vec<f64>,
    pub val: Option<MetricsReport>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub detector: Detector,
    pub store: ParamStore,
    pub log: TrainLog,
    pub seed: u64,
}

/// End-to-end training of encoders and head under mean BCE-with-logits and
/// AdamW. Batch order and dropout masks are drawn from `seed`.
pub fn train(
    detector: &Detector,
    inputs: &ModelInputs,
    labels: &[bool],
    hyper: &OptimHyper,
    seed: u64,
    validation: Option<(&ModelInputs, &[bool])>,
) -> Result<TrainedModel> {
    hyper.validate()?;
    let n = inputs.check(&detector.modalities())?;
    if labels.len() != n {
        return Err(Error::dim("train labels", &[n], &[labels.len()]));
    }
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(Error::Training("training set holds a single class".into()));
    }
    let mut store = ParamStore::new();
    detector.init(&mut store, seed)?;
    let mut order_rng = seeded(seed.wrapping_add(1));
    let mut dropout_rng = seeded(seed.wrapping_add(2));
    let targets: Vec<f64> = labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut order_rng);
        let mut batch_losses = Vec::new();
        for batch in order.chunks(hyper.batch_size) {
            // A training-mode batch norm needs two rows for a variance.
            if batch.len() < 2 && n >= 2 {
                continue;
            }
            let mut tape = Tape::new();
            let mut ctx = Ctx::train(seeded(dropout_rng.next_u64()));
            let z = detector.forward(&mut tape, &store, inputs, batch, &mut ctx)?;
            let y: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let loss = tape.bce_with_logits(z, &y)?;
            tape.backward(loss)?;
            let grads = tape.param_grads();
            adamw_step(&mut store, &grads, hyper)?;
            ctx.apply_bn_updates(&mut store);
            batch_losses.push(tape.value(loss).data[0]);
        }
        let mean_loss = batch_losses.iter().sum::<f64>() / batch_losses.len().max(1) as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Numeric(format!("training loss at epoch {epoch}")));
        }
        let val = match validation {
            Some((vi, vy)) => Some(MetricsReport::from_predictions(&detector.predict(&store, vi)?, vy)?),
            None => None,
        };
        info!(
            "{} epoch {epoch}: loss {mean_loss:.5}{}",
            detector.name(),
            val.as_ref().map_or(String::new(), |v| format!(", val f1 {:.4}", v.f1))
        );
        log.epochs.push(EpochLog {
            epoch,
            mean_loss,
            batch_losses,
            val,
        });
    }
    Ok(TrainedModel {
        detector: detector.clone(),
        store,
        log,
        seed,
    })
}

const MANIFEST_PREFIX: &str = "manifest.";

/// Stores each `key=value` pair as an empty `manifest.key=value` entry.
pub fn write_manifest(store: &mut ParamStore, manifest: &BTreeMap<String, String>) {
    for (k, v) in manifest {
        store.insert_buffer(format!("{MANIFEST_PREFIX}{k}={v}"), Tensor::zeros(&[0]));
    }
}

pub fn read_manifest(store: &ParamStore) -> BTreeMap<String, String> {
    store
        .names()
        .filter_map(|n| n.strip_prefix(MANIFEST_PREFIX))
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

impl TrainedModel {
    /// Parameters plus manifest (architecture, dims, seed and `extra`) as one
    /// DMLW container.
    pub fn to_store(&self, extra: &BTreeMap<String, String>) -> ParamStore {
        let mut store = self.store.clone();
        let mut manifest = self.detector.manifest();
        manifest.insert("seed".into(), self.seed.to_string());
        manifest.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        write_manifest(&mut store, &manifest);
        store
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: &BTreeMap<String, String>) -> Result<()> {
        self.to_store(extra).save(path)
    }

    pub fn from_store(store: ParamStore) -> Result<(Self, BTreeMap<String, String>)> {
        let manifest = read_manifest(&store);
        let detector = Detector::from_manifest(&manifest)?;
        let seed = manifest.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
        Ok((
            Self {
                detector,
                store,
                log: TrainLog::default(),
                seed,
            },
            manifest,
        ))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, BTreeMap<String, String>)> {
        Self::from_store(ParamStore::load(path)?)
    }
}

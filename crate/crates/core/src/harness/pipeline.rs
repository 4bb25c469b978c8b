use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::callgraph::{build_presence, graph_to_sequence, select_key_apis, KeyApiConfig, KeyApiSet, ReduceConfig};
use crate::deximg::{encode_rgb_image, sections_of_files, DEFAULT_OUT_SIZE, DEFAULT_WIDTH};
use crate::error::{Error, Result};
use crate::fusion::{ImageBatch, ModelInputs};
use crate::nnkit::init::seeded;
use crate::nnkit::{ParamStore, RealMatrix, Tensor};
use crate::sample::{ApkSample, Label};
use crate::seqenc::{encode_sequence, fit_vocab, EncodedSeq, Vocab};
use crate::tabular::{fit_pca, BinaryFeatureMatrix, PcaModel, DEFAULT_TARGET_RATIO};

/// Seeded stratified split; returns ascending `(train, test)` index lists
/// that are disjoint and cover `0..labels.len()`.
pub fn stratified_split(labels: &[Label], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Parameter(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut rng = seeded(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [Label::Benign, Label::Malware] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepConfig {
    pub pca_target: f64,
    pub image_width: usize,
    pub image_size: usize,
    pub key_api: KeyApiConfig,
    pub reduce: ReduceConfig,
    /// Token budget including the leading CLS.
    pub max_len: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            pca_target: DEFAULT_TARGET_RATIO,
            image_width: DEFAULT_WIDTH,
            image_size: DEFAULT_OUT_SIZE,
            key_api: KeyApiConfig::default(),
            reduce: ReduceConfig::default(),
            max_len: 512,
        }
    }
}

/// Everything fitted on the training split that turns raw samples into
/// encoder inputs: feature order and PCA, key APIs, token vocabulary.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    pub cfg: PrepConfig,
    pub feature_names: Vec<String>,
    pub pca: PcaModel,
    pub keys: KeyApiSet,
    pub vocab: Vocab,
}

fn bits_matrix(samples: &[&ApkSample], names: &[String]) -> Result<BinaryFeatureMatrix> {
    let mut bits = Vec::with_capacity(samples.len() * names.len());
    for s in samples {
        let row = s.tabular.as_ref().ok_or_else(|| Error::ModalityMissing {
            sample: s.id.clone(),
            modality: "tabular",
        })?;
        if row.len() != names.len() {
            return Err(Error::dim("tabular row", &[names.len()], &[row.len()]));
        }
        bits.extend_from_slice(row);
    }
    BinaryFeatureMatrix::new(samples.iter().map(|s| s.id.clone()).collect(), names.to_vec(), bits)
}

fn graph_of(s: &ApkSample) -> Result<&crate::callgraph::CallGraph> {
    s.graph.as_ref().ok_or_else(|| Error::ModalityMissing {
        sample: s.id.clone(),
        modality: "graph",
    })
}

impl Preprocessor {
    pub fn fit(train: &[&ApkSample], feature_names: &[String], cfg: PrepConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Usage("cannot fit preprocessing on an empty training set".into()));
        }
        let matrix = bits_matrix(train, feature_names)?;
        let pca = fit_pca(&matrix, cfg.pca_target)?;
        let graphs: Vec<(String, &crate::callgraph::CallGraph)> =
            train.iter().map(|s| Ok((s.id.clone(), graph_of(s)?))).collect::<Result<_>>()?;
        let presence = build_presence(&graphs)?;
        let labels: Vec<Label> = train.iter().map(|s| s.label).collect();
        let keys = select_key_apis(&presence, &labels, &cfg.key_api)?;
        let mut seqs = Vec::with_capacity(train.len());
        for (_, g) in &graphs {
            seqs.push(graph_to_sequence(g, &keys, &cfg.reduce)?.1);
        }
        let vocab = fit_vocab(&seqs);
        Ok(Self {
            cfg,
            feature_names: feature_names.to_vec(),
            pca,
            keys,
            vocab,
        })
    }

    pub fn tf_rows(&self, bits: &[Vec<u8>]) -> Result<RealMatrix> {
        let refs: Vec<ApkSample> = bits
            .iter()
            .enumerate()
            .map(|(i, b)| ApkSample {
                id: i.to_string(),
                label: Label::Benign,
                tabular: Some(b.clone()),
                dex: None,
                graph: None,
            })
            .collect();
        let r: Vec<&ApkSample> = refs.iter().collect();
        self.pca.transform(&bits_matrix(&r, &self.feature_names)?.to_real())
    }

    pub fn image(&self, s: &ApkSample) -> Result<Tensor> {
        let files = s.dex.as_ref().ok_or_else(|| Error::ModalityMissing {
            sample: s.id.clone(),
            modality: "dex",
        })?;
        let sections = sections_of_files(files)?;
        Ok(encode_rgb_image(&sections, self.cfg.image_width, self.cfg.image_size)?.resized.to_tensor())
    }

    pub fn sequence(&self, s: &ApkSample) -> Result<Vec<String>> {
        Ok(graph_to_sequence(graph_of(s)?, &self.keys, &self.cfg.reduce)?.1)
    }

    pub fn encode(&self, s: &ApkSample) -> Result<EncodedSeq> {
        Ok(encode_sequence(&self.sequence(s)?, &self.vocab, self.cfg.max_len))
    }

    /// Encoder inputs for every sample. Modalities absent from any sample are
    /// left out of the batch entirely.
    pub fn transform(&self, samples: &[&ApkSample]) -> Result<ModelInputs> {
        let tf = if samples.iter().all(|s| s.tabular.is_some()) {
            Some(self.pca.transform(&bits_matrix(samples, &self.feature_names)?.to_real())?)
        } else {
            None
        };
        let images = if samples.iter().all(|s| s.dex.is_some()) {
            let t: Vec<Tensor> = samples.iter().map(|s| self.image(s)).collect::<Result<_>>()?;
            Some(ImageBatch::from_tensors(&t)?)
        } else {
            None
        };
        let seqs = if samples.iter().all(|s| s.graph.is_some()) {
            Some(samples.iter().map(|s| self.encode(s)).collect::<Result<_>>()?)
        } else {
            None
        };
        Ok(ModelInputs { tf, images, seqs })
    }

    /// Writes `features.txt`, `keyapis.txt`, `vocab.tsv` and `prep.dmlw`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("features.txt"), self.feature_names.join("\n") + "\n")?;
        self.keys.write_text(BufWriter::new(File::create(dir.join("keyapis.txt"))?))?;
        self.vocab.write_tsv(BufWriter::new(File::create(dir.join("vocab.tsv"))?))?;
        let mut store = ParamStore::new();
        self.pca.to_store(&mut store);
        let c = &self.cfg;
        let w = &c.reduce.weights;
        crate::fusion::write_manifest(
            &mut store,
            &[
                ("prep.image_width", c.image_width.to_string()),
                ("prep.image_size", c.image_size.to_string()),
                ("prep.max_len", c.max_len.to_string()),
                ("prep.pca_target", c.pca_target.to_string()),
                ("prep.resolution", c.reduce.resolution.to_string()),
                ("prep.top_n", c.reduce.top_n.to_string()),
                ("prep.damping", c.reduce.damping.to_string()),
                ("prep.reduce_max_len", c.reduce.max_len.to_string()),
                ("prep.reduce_seed", c.reduce.seed.to_string()),
                ("prep.weights", w.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        );
        store.save(dir.join("prep.dmlw"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let feature_names: Vec<String> = fs::read_to_string(dir.join("features.txt"))?
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let keys = KeyApiSet::read_text(BufReader::new(File::open(dir.join("keyapis.txt"))?))?;
        let vocab = Vocab::read_tsv(BufReader::new(File::open(dir.join("vocab.tsv"))?))?;
        let store = ParamStore::load(dir.join("prep.dmlw"))?;
        let pca = PcaModel::from_store(&store)?;
        let m = crate::fusion::read_manifest(&store);
        let get = |k: &str| -> Result<&str> {
            m.get(k).map(String::as_str).ok_or_else(|| Error::Format(format!("prep manifest lacks `{k}`")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("prep manifest `{k}` = `{v}`")))
        }
        let weights: Vec<f64> = get("prep.weights")?
            .split(',')
            .map(|v| num("prep.weights", v))
            .collect::<Result<_>>()?;
        let cfg = PrepConfig {
            pca_target: num("prep.pca_target", get("prep.pca_target")?)?,
            image_width: num("prep.image_width", get("prep.image_width")?)?,
            image_size: num("prep.image_size", get("prep.image_size")?)?,
            key_api: KeyApiConfig::default(),
            reduce: ReduceConfig {
                resolution: num("prep.resolution", get("prep.resolution")?)?,
                weights: weights
                    .try_into()
                    .map_err(|_| Error::Format("prep.weights needs five values".into()))?,
                top_n: num("prep.top_n", get("prep.top_n")?)?,
                damping: num("prep.damping", get("prep.damping")?)?,
                max_len: num("prep.reduce_max_len", get("prep.reduce_max_len")?)?,
                seed: num("prep.reduce_seed", get("prep.reduce_seed")?)?,
            },
            max_len: num("prep.max_len", get("prep.max_len")?)?,
        };
        Ok(Self {
            cfg,
            feature_names,
            pca,
            keys,
            vocab,
        })
    }
}

/// Names of all APIs appearing in any graph, for alignment checks.
pub fn api_universe(samples: &[&ApkSample]) -> BTreeSet<String> {
    samples
        .iter()
        .filter_map(|s| s.graph.as_ref())
        .flat_map(|g| g.names().iter().cloned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_cover_and_stratified() {
        let labels: Vec<Label> = (0..40).map(|i| if i % 4 == 0 { Label::Benign } else { Label::Malware }).collect();
        let (tr, te) = stratified_split(&labels, 0.3, 9).unwrap();
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        assert_eq!(te.len(), 3 + 9);
        assert_eq!(stratified_split(&labels, 0.3, 9).unwrap(), (tr, te));
    }
}

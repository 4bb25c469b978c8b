use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::experiment::{ModelName, Scenario};
use super::pipeline::PrepConfig;
use super::synth::SyntheticConfig;
use crate::error::{Error, Result};
use crate::nnkit::OptimHyper;
use crate::robustness::AttackHyper;
use crate::seqenc::EncoderConfig;

/// Desk-scale experiment settings. Every field can be set from a
/// `key = value` file or a CLI override with the same key.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub test_fraction: f64,
    pub synth: SyntheticConfig,
    pub prep: PrepConfig,
    pub hyper: OptimHyper,
    pub tf_hidden: [usize; 2],
    pub tf_dropout: f64,
    pub if_channels: [usize; 2],
    pub gsf: EncoderConfig,
    pub fusion_heads: usize,
    pub models: Vec<ModelName>,
    pub scenarios: Vec<Scenario>,
    pub junk_ratio: f64,
    pub indirection_ratio: f64,
    pub encryption_ratio: f64,
    pub attack: AttackHyper,
    pub attack_allowed_df: f64,
    pub attack_protected_df: f64,
    pub attack_benign_max: f64,
    pub attack_max_flips: usize,
}

pub const DEFAULT_MODELS: &str = "U1,U2,U3,M1,M2,M3,M4,M5";
pub const DEFAULT_SCENARIOS: &str = "original,rn,co,enc,mixed,adversarial";

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut prep = PrepConfig::default();
        prep.image_size = 32;
        prep.max_len = 64;
        prep.reduce.max_len = 63;
        Self {
            seed: 42,
            test_fraction: 0.2,
            synth: SyntheticConfig::default(),
            prep,
            hyper: OptimHyper {
                learning_rate: 1e-3,
                epochs: 8,
                ..OptimHyper::default()
            },
            tf_hidden: [64, 64],
            tf_dropout: 0.3,
            if_channels: [4, 8],
            gsf: EncoderConfig {
                layers: 1,
                heads: 4,
                hidden: 32,
                ff_hidden: 64,
                max_len: 64,
                dropout: 0.1,
            },
            fusion_heads: 4,
            models: parse_list(DEFAULT_MODELS).expect("valid default"),
            scenarios: parse_list(DEFAULT_SCENARIOS).expect("valid default"),
            junk_ratio: 0.10,
            indirection_ratio: 0.20,
            encryption_ratio: 0.50,
            attack: AttackHyper::default(),
            attack_allowed_df: 0.3,
            attack_protected_df: 0.5,
            attack_benign_max: 0.05,
            attack_max_flips: 20,
        }
    }
}

fn parse_list<T: FromStr<Err = Error>>(v: &str) -> Result<Vec<T>> {
    let items: Vec<T> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Configuration("empty list".into()));
    }
    Ok(items)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Configuration(format!("`{key}`: cannot parse `{v}`")))
}

fn pair(key: &str, v: &str) -> Result<[usize; 2]> {
    let parts: Vec<usize> = v.split(',').map(|p| num(key, p.trim())).collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::Configuration(format!("`{key}` takes two comma-separated values")))
}

impl ExperimentConfig {
    /// Sets one key. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key.trim() {
            "seed" => {
                self.seed = num(key, v)?;
                self.synth.seed = self.seed;
            }
            "synth_seed" => self.synth.seed = num(key, v)?,
            "test_fraction" => self.test_fraction = num(key, v)?,
            "n_benign" => self.synth.n_benign = num(key, v)?,
            "n_malware" => self.synth.n_malware = num(key, v)?,
            "pca_target" => self.prep.pca_target = num(key, v)?,
            "image_width" => self.prep.image_width = num(key, v)?,
            "image_size" => self.prep.image_size = num(key, v)?,
            "key_apis" => self.prep.key_api.k = num(key, v)?,
            "top_n" => self.prep.reduce.top_n = num(key, v)?,
            "max_len" => {
                let n: usize = num(key, v)?;
                self.prep.max_len = n;
                self.prep.reduce.max_len = n.saturating_sub(1);
                self.gsf.max_len = n;
            }
            "epochs" => self.hyper.epochs = num(key, v)?,
            "batch_size" => self.hyper.batch_size = num(key, v)?,
            "learning_rate" => self.hyper.learning_rate = num(key, v)?,
            "weight_decay" => self.hyper.weight_decay = num(key, v)?,
            "tf_hidden" => self.tf_hidden = pair(key, v)?,
            "tf_dropout" => self.tf_dropout = num(key, v)?,
            "if_channels" => self.if_channels = pair(key, v)?,
            "gsf_layers" => self.gsf.layers = num(key, v)?,
            "gsf_heads" => self.gsf.heads = num(key, v)?,
            "gsf_hidden" => self.gsf.hidden = num(key, v)?,
            "gsf_ff_hidden" => self.gsf.ff_hidden = num(key, v)?,
            "gsf_dropout" => self.gsf.dropout = num(key, v)?,
            "fusion_heads" => self.fusion_heads = num(key, v)?,
            "models" => self.models = parse_list(v)?,
            "scenarios" => self.scenarios = parse_list(v)?,
            "junk_ratio" => self.junk_ratio = num(key, v)?,
            "indir_ratio" | "indirection_ratio" => self.indirection_ratio = num(key, v)?,
            "enc_ratio" | "encryption_ratio" => self.encryption_ratio = num(key, v)?,
            "attack_epochs" => self.attack.epochs = num(key, v)?,
            "attack_batch_size" => self.attack.batch_size = num(key, v)?,
            "attack_learning_rate" => self.attack.learning_rate = num(key, v)?,
            "attack_hidden" => self.attack.hidden = num(key, v)?,
            "allowed_df" => self.attack_allowed_df = num(key, v)?,
            "protected_df" => self.attack_protected_df = num(key, v)?,
            "benign_max" => self.attack_benign_max = num(key, v)?,
            "max_flips" => self.attack_max_flips = num(key, v)?,
            other => return Err(Error::Configuration(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn parse_into(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Configuration(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Configuration(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.parse_into(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Configuration("test_fraction must lie in (0, 1)".into()));
        }
        for (k, r) in [
            ("junk_ratio", self.junk_ratio),
            ("indir_ratio", self.indirection_ratio),
            ("enc_ratio", self.encryption_ratio),
            ("allowed_df", self.attack_allowed_df),
            ("protected_df", self.attack_protected_df),
            ("benign_max", self.attack_benign_max),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Configuration(format!("{k} must lie in [0, 1]")));
            }
        }
        if self.prep.max_len != self.gsf.max_len {
            return Err(Error::Configuration("max_len differs between preprocessing and encoder".into()));
        }
        self.synth.validate()?;
        self.gsf.validate()?;
        self.hyper.validate().map_err(|e| Error::Configuration(e.to_string()))
    }
}

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nnkit::attention::{init_mha, mha};
use crate::nnkit::init::{glorot, Rng64};
use crate::nnkit::layers::{init_linear_zero, linear};
use crate::nnkit::{ParamStore, Tape, Var};

pub const MODALITY_DIM: usize = 128;
pub const DEFAULT_HEADS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Tf,
    If,
    Gsf,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Tf, Modality::If, Modality::Gsf];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Tf => "tf",
            Modality::If => "if",
            Modality::Gsf => "gsf",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tf" => Ok(Modality::Tf),
            "if" => Ok(Modality::If),
            "gsf" => Ok(Modality::Gsf),
            other => Err(Error::Configuration(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Concat,
    SelfAttn,
    CrossAttn,
    Gated,
    Dwf,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Concat,
        Strategy::SelfAttn,
        Strategy::CrossAttn,
        Strategy::Gated,
        Strategy::Dwf,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Concat => "concat",
            Strategy::SelfAttn => "self_attn",
            Strategy::CrossAttn => "cross_attn",
            Strategy::Gated => "gated",
            Strategy::Dwf => "dwf",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Configuration(format!("unknown fusion strategy `{s}`")))
    }
}

/// One fusion strategy over an ordered set of present modalities, plus the
/// logit head on top of it.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionHead {
    pub strategy: Strategy,
    pub modalities: Vec<Modality>,
    pub heads: usize,
    /// Per-modality embedding width; 128 in every trained model, smaller
    /// only for toy gradient checks.
    pub dim: usize,
    pub d_fusion: usize,
    pub prefix: String,
}

impl FusionHead {
    pub fn new(strategy: Strategy, modalities: &[Modality]) -> Result<Self> {
        let mut mods = modalities.to_vec();
        mods.sort();
        mods.dedup();
        if mods.len() < 2 {
            return Err(Error::Configuration(format!(
                "fusion needs at least two modalities, got {}",
                mods.len()
            )));
        }
        Ok(Self {
            strategy,
            d_fusion: MODALITY_DIM * mods.len(),
            modalities: mods,
            heads: DEFAULT_HEADS,
            dim: MODALITY_DIM,
            prefix: "fusion".into(),
        })
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    /// Sets the embedding width and resets `d_fusion` to the concat width.
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self.d_fusion = dim * self.modalities.len();
        self
    }

    pub fn with_d_fusion(mut self, d: usize) -> Self {
        self.d_fusion = d;
        self
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// Width of the fused vector fed to the classifier.
    pub fn out_dim(&self) -> usize {
        match self.strategy {
            Strategy::Gated => self.dim,
            Strategy::Dwf => self.d_fusion,
            _ => self.dim * self.modalities.len(),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng64) -> Result<()> {
        let d = self.dim;
        for m in &self.modalities {
            match self.strategy {
                Strategy::Concat => {}
                Strategy::SelfAttn => init_mha(store, rng, &self.name(&format!("self.{m}")), d, self.heads)?,
                Strategy::CrossAttn => init_mha(store, rng, &self.name(&format!("cross.{m}")), d, self.heads)?,
                Strategy::Gated => store.insert(self.name(&format!("gate.{m}")), glorot(rng, &[d, 1], d, 1)),
                Strategy::Dwf => store.insert(self.name(&format!("score.{m}")), glorot(rng, &[d, 1], d, 1)),
            }
        }
        if self.strategy == Strategy::Dwf {
            let n = d * self.modalities.len();
            store.insert(self.name("w_fusion"), glorot(rng, &[n, self.d_fusion], n, self.d_fusion));
        }
        init_linear_zero(store, &self.name("cls"), self.out_dim(), 1);
        Ok(())
    }

    fn check(&self, tape: &Tape, embs: &[Var]) -> Result<usize> {
        if embs.len() != self.modalities.len() {
            return Err(Error::Configuration(format!(
                "{} fusion over {} modalities got {} embeddings",
                self.strategy,
                self.modalities.len(),
                embs.len()
            )));
        }
        let b = tape.shape(embs[0])[0];
        for &e in embs {
            if tape.shape(e) != [b, self.dim] {
                return Err(Error::dim("fusion input", &[b, self.dim], tape.shape(e)));
            }
        }
        Ok(b)
    }

    /// Fuses per-modality embeddings (each `B × 128`, in `self.modalities`
    /// order) into `B × out_dim`.
    pub fn fuse(&self, tape: &mut Tape, store: &ParamStore, embs: &[Var]) -> Result<Var> {
        let b = self.check(tape, embs)?;
        let d = self.dim;
        match self.strategy {
            Strategy::Concat => tape.concat(embs, 1),
            Strategy::SelfAttn => {
                let mut outs = Vec::with_capacity(embs.len());
                for (m, &e) in self.modalities.iter().zip(embs) {
                    let x = tape.reshape(e, &[b, 1, d])?;
                    let y = mha(tape, store, &self.name(&format!("self.{m}")), x, x, x, self.heads, None)?;
                    outs.push(tape.reshape(y, &[b, d])?);
                }
                tape.concat(&outs, 1)
            }
            Strategy::CrossAttn => {
                let tokens: Vec<Var> = embs
                    .iter()
                    .map(|&e| tape.reshape(e, &[b, 1, d]))
                    .collect::<Result<_>>()?;
                let mut outs = Vec::with_capacity(embs.len());
                for (i, m) in self.modalities.iter().enumerate() {
                    let others: Vec<Var> = (0..tokens.len()).filter(|&j| j != i).map(|j| tokens[j]).collect();
                    let kv = if others.len() == 1 { others[0] } else { tape.concat(&others, 1)? };
                    let y = mha(tape, store, &self.name(&format!("cross.{m}")), tokens[i], kv, kv, self.heads, None)?;
                    outs.push(tape.reshape(y, &[b, d])?);
                }
                tape.concat(&outs, 1)
            }
            Strategy::Gated => {
                let mut acc: Option<Var> = None;
                for (m, &e) in self.modalities.iter().zip(embs) {
                    let w = tape.param(store, &self.name(&format!("gate.{m}")))?;
                    let s = tape.matmul(e, w)?;
                    let g = tape.sigmoid(s);
                    let term = tape.mul_col(e, g)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => tape.add(a, term)?,
                    });
                }
                Ok(acc.expect("at least two modalities"))
            }
            Strategy::Dwf => {
                let alpha = self.dwf_alpha(tape, store, embs)?;
                let mut parts = Vec::with_capacity(embs.len());
                for (i, &e) in embs.iter().enumerate() {
                    let a = tape.slice(alpha, 1, i, 1)?;
                    parts.push(tape.mul_col(e, a)?);
                }
                let cat = tape.concat(&parts, 1)?;
                let w = tape.param(store, &self.name("w_fusion"))?;
                tape.matmul(cat, w)
            }
        }
    }

    /// DWF modality weights, `B × M`, each row a softmax over `w_m · v_m`.
    pub fn dwf_alpha(&self, tape: &mut Tape, store: &ParamStore, embs: &[Var]) -> Result<Var> {
        self.check(tape, embs)?;
        let mut scores = Vec::with_capacity(embs.len());
        for (m, &e) in self.modalities.iter().zip(embs) {
            let w = tape.param(store, &self.name(&format!("score.{m}")))?;
            scores.push(tape.matmul(e, w)?);
        }
        let s = tape.concat(&scores, 1)?;
        Ok(tape.softmax(s))
    }

    /// Fused features followed by the logit head; returns `(fused, logits B × 1)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, embs: &[Var]) -> Result<(Var, Var)> {
        let fused = self.fuse(tape, store, embs)?;
        let logit = classify(tape, store, &self.name("cls"), fused)?;
        Ok((fused, logit))
    }
}

/// The affine logit head; prediction is `logit > 0`.
pub fn classify(tape: &mut Tape, store: &ParamStore, prefix: &str, fused: Var) -> Result<Var> {
    linear(tape, store, prefix, fused)
}

pub fn predict(logit: f64) -> bool {
    logit > 0.0
}

use super::vocab::EncodedSeq;
use crate::error::{Error, Result};
use crate::nnkit::attention::{head_dim, init_mha, mha};
use crate::nnkit::init::{glorot, Rng64};
use crate::nnkit::layers::{dropout, init_layer_norm, init_linear, layer_norm, linear, Ctx};
use crate::nnkit::{ParamStore, RealMatrix, Tape, Var};

pub const EMBED_DIM: usize = 128;
pub const MAX_POSITIONS: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff_hidden: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 64,
            ff_hidden: 128,
            max_len: MAX_POSITIONS,
            dropout: 0.3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        head_dim(self.hidden, self.heads)?;
        if self.max_len == 0 || self.max_len > MAX_POSITIONS {
            return Err(Error::Configuration(format!(
                "max_len {} outside 1..={MAX_POSITIONS}",
                self.max_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Configuration(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

/// The U3 sequence encoder: token + position embeddings, pre-norm
/// transformer blocks, first-token pooling, `FC → 128 → 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceEncoder {
    pub cfg: EncoderConfig,
    pub vocab_size: usize,
    pub prefix: String,
}

impl SequenceEncoder {
    pub fn new(cfg: EncoderConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            vocab_size,
            prefix: "gsf".into(),
        })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng64) -> Result<()> {
        let d = self.cfg.hidden;
        store.insert(self.name("tok_emb"), glorot(rng, &[self.vocab_size, d], 1, d));
        store.insert(self.name("pos_emb"), glorot(rng, &[self.cfg.max_len, d], 1, d));
        for l in 0..self.cfg.layers {
            let p = |s: &str| self.name(&format!("block{l}.{s}"));
            init_layer_norm(store, &p("ln1"), d);
            init_mha(store, rng, &p("attn"), d, self.cfg.heads)?;
            init_layer_norm(store, &p("ln2"), d);
            init_linear(store, rng, &p("ff1"), d, self.cfg.ff_hidden);
            init_linear(store, rng, &p("ff2"), self.cfg.ff_hidden, d);
        }
        init_layer_norm(store, &self.name("ln_f"), d);
        init_linear(store, rng, &self.name("fc"), d, EMBED_DIM);
        init_linear(store, rng, &self.name("out"), EMBED_DIM, 1);
        Ok(())
    }

    /// `batch` sequences of equal length; returns `(embedding B × 128,
    /// logits B × 1)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[&EncodedSeq],
        ctx: &mut Ctx,
    ) -> Result<(Var, Var)> {
        let b = batch.len();
        let l = batch.first().map_or(0, |s| s.ids.len());
        if l == 0 || l > self.cfg.max_len || batch.iter().any(|s| s.ids.len() != l || s.mask.len() != l) {
            return Err(Error::dim("gsf_encode", &[b, self.cfg.max_len], &[b, l]));
        }
        let d = self.cfg.hidden;
        let ids: Vec<usize> = batch.iter().flat_map(|s| s.ids.iter().copied()).collect();
        let mask: Vec<bool> = batch.iter().flat_map(|s| s.mask.iter().copied()).collect();
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();

        let tok_table = tape.param(store, &self.name("tok_emb"))?;
        let pos_table = tape.param(store, &self.name("pos_emb"))?;
        let tok = tape.gather(tok_table, &ids)?;
        let pos = tape.gather(pos_table, &positions)?;
        let x = tape.add(tok, pos)?;
        let mut x = tape.reshape(x, &[b, l, d])?;
        for layer in 0..self.cfg.layers {
            let p = |s: &str| self.name(&format!("block{layer}.{s}"));
            let h = layer_norm(tape, store, &p("ln1"), x)?;
            let a = mha(tape, store, &p("attn"), h, h, h, self.cfg.heads, Some(&mask))?;
            x = tape.add(x, a)?;
            let h = layer_norm(tape, store, &p("ln2"), x)?;
            let h = linear(tape, store, &p("ff1"), h)?;
            let h = tape.relu(h);
            let h = linear(tape, store, &p("ff2"), h)?;
            x = tape.add(x, h)?;
        }
        let x = layer_norm(tape, store, &self.name("ln_f"), x)?;
        let cls = tape.select_token(x, 0)?;
        let h = linear(tape, store, &self.name("fc"), cls)?;
        let h = tape.relu(h);
        let emb = dropout(tape, h, self.cfg.dropout, ctx)?;
        let logit = linear(tape, store, &self.name("out"), emb)?;
        Ok((emb, logit))
    }
}

/// Evaluation forward over a batch of encoded sequences.
pub fn gsf_encode(seqs: &[EncodedSeq], encoder: &SequenceEncoder, store: &ParamStore) -> Result<(RealMatrix, Vec<f64>)> {
    let refs: Vec<&EncodedSeq> = seqs.iter().collect();
    let mut tape = Tape::new();
    let (emb, logit) = encoder.forward(&mut tape, store, &refs, &mut Ctx::eval())?;
    Ok((tape.value(emb).clone().into_matrix()?, tape.value(logit).data.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::init::seeded;
    use crate::seqenc::vocab::{PAD, CLS};

    fn toy() -> (SequenceEncoder, ParamStore) {
        let cfg = EncoderConfig {
            layers: 2,
            heads: 2,
            hidden: 16,
            ff_hidden: 24,
            max_len: 8,
            dropout: 0.3,
        };
        let e = SequenceEncoder::new(cfg, 10).unwrap();
        let mut s = ParamStore::new();
        e.init(&mut s, &mut seeded(5)).unwrap();
        (e, s)
    }

    fn seq(ids: &[usize], n_real: usize) -> EncodedSeq {
        EncodedSeq {
            ids: ids.to_vec(),
            mask: (0..ids.len()).map(|i| i < n_real).collect(),
        }
    }

    #[test]
    fn output_dims() {
        let (e, s) = toy();
        let (emb, logit) = gsf_encode(&[seq(&[CLS, 4, 5, PAD], 3)], &e, &s).unwrap();
        assert_eq!(emb.shape(), [1, 128]);
        assert_eq!(logit.len(), 1);
    }

    #[test]
    fn out_of_range_id_is_vocabulary_error() {
        let (e, s) = toy();
        let err = gsf_encode(&[seq(&[CLS, 10], 2)], &e, &s).unwrap_err();
        assert!(matches!(err, Error::Vocabulary { id: 10, size: 10 }));
    }

    #[test]
    fn pad_content_is_invisible() {
        let (e, s) = toy();
        let a = gsf_encode(&[seq(&[CLS, 4, PAD, PAD, PAD], 2)], &e, &s).unwrap();
        let b = gsf_encode(&[seq(&[CLS, 4, 7, 3, 9], 2)], &e, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = EncoderConfig { hidden: 10, heads: 4, ..Default::default() };
        assert!(matches!(SequenceEncoder::new(cfg, 5), Err(Error::Configuration(_))));
        let cfg = EncoderConfig { max_len: 513, ..Default::default() };
        assert!(SequenceEncoder::new(cfg, 5).is_err());
    }
}

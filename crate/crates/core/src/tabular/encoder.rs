use super::pca::PcaModel;
use crate::error::{Error, Result};
use crate::nnkit::init::Rng64;
use crate::nnkit::layers::{batch_norm, dropout, init_batch_norm, init_linear, linear, Ctx};
use crate::nnkit::{ParamStore, RealMatrix, Tape, Tensor, Var};

pub const EMBED_DIM: usize = 128;

/// The U1 tabular MLP: `d → 256 → 256 → dropout → 128 → 1`, batch norm and
/// ReLU after each hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularEncoder {
    pub d_in: usize,
    pub hidden: [usize; 2],
    pub dropout: f64,
    pub prefix: String,
}

impl TabularEncoder {
    pub fn new(d_in: usize) -> Self {
        Self {
            d_in,
            hidden: [256, 256],
            dropout: 0.3,
            prefix: "tf".into(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        EMBED_DIM
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng64) {
        let [h1, h2] = self.hidden;
        init_linear(store, rng, &self.name("fc1"), self.d_in, h1);
        init_batch_norm(store, &self.name("bn1"), h1);
        init_linear(store, rng, &self.name("fc2"), h1, h2);
        init_batch_norm(store, &self.name("bn2"), h2);
        init_linear(store, rng, &self.name("fc3"), h2, EMBED_DIM);
        init_batch_norm(store, &self.name("bn3"), EMBED_DIM);
        init_linear(store, rng, &self.name("out"), EMBED_DIM, 1);
    }

    /// `x` is `B × d_in`; returns `(embedding B × 128, logits B × 1)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: &mut Ctx) -> Result<(Var, Var)> {
        let d = tape.shape(x).last().copied().unwrap_or(0);
        if d != self.d_in {
            return Err(Error::dim("tf_encode", &[self.d_in], tape.shape(x)));
        }
        let mut h = x;
        for (fc, bn) in [("fc1", "bn1"), ("fc2", "bn2")] {
            h = linear(tape, store, &self.name(fc), h)?;
            h = batch_norm(tape, store, &self.name(bn), h, ctx)?;
            h = tape.relu(h);
        }
        h = dropout(tape, h, self.dropout, ctx)?;
        h = linear(tape, store, &self.name("fc3"), h)?;
        h = batch_norm(tape, store, &self.name("bn3"), h, ctx)?;
        let emb = tape.relu(h);
        let logit = linear(tape, store, &self.name("out"), emb)?;
        Ok((emb, logit))
    }
}

/// Evaluation-mode U1 forward over already-projected rows.
pub fn tf_encode(pca_rows: &RealMatrix, encoder: &TabularEncoder, store: &ParamStore) -> Result<(RealMatrix, Vec<f64>)> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from(pca_rows.clone()));
    let (emb, logit) = encoder.forward(&mut tape, store, x, &mut Ctx::eval())?;
    let emb = tape.value(emb).clone().into_matrix()?;
    Ok((emb, tape.value(logit).data.clone()))
}

/// Projects a raw feature matrix with `pca`, then encodes.
pub fn tf_encode_raw(
    raw: &RealMatrix,
    pca: &PcaModel,
    encoder: &TabularEncoder,
    store: &ParamStore,
) -> Result<(RealMatrix, Vec<f64>)> {
    tf_encode(&pca.transform(raw)?, encoder, store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::init::seeded;

    fn setup(d: usize) -> (TabularEncoder, ParamStore) {
        let enc = TabularEncoder::new(d);
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut seeded(7));
        (enc, store)
    }

    #[test]
    fn output_shapes() {
        let (enc, store) = setup(10);
        let x = RealMatrix::new(3, 10, (0..30).map(|i| (i as f64).sin()).collect()).unwrap();
        let (e, l) = tf_encode(&x, &enc, &store).unwrap();
        assert_eq!(e.shape(), [3, 128]);
        assert_eq!(l.len(), 3);
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let (enc, mut store) = setup(4);
        let names: Vec<String> = store
            .names()
            .filter(|n| n.contains("fc") || n.contains("out") || n.ends_with(".gamma"))
            .map(str::to_string)
            .collect();
        for n in names {
            store.get_mut(&n).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = RealMatrix::new(2, 4, vec![1.0, -2.0, 3.0, 0.5, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let (e, l) = tf_encode(&x, &enc, &store).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
        assert!(l.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_is_repeatable() {
        let (enc, store) = setup(6);
        let x = RealMatrix::new(2, 6, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let a = tf_encode(&x, &enc, &store).unwrap();
        let b = tf_encode(&x, &enc, &store).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn width_mismatch_rejected() {
        let (enc, store) = setup(6);
        let x = RealMatrix::zeros(2, 5);
        assert!(matches!(tf_encode(&x, &enc, &store), Err(Error::Dimension { .. })));
    }
}

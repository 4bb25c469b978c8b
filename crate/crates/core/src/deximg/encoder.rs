use crate::error::{Error, Result};
use crate::nnkit::init::{glorot, Rng64};
use crate::nnkit::init::constant;
use crate::nnkit::layers::{init_linear, linear, Ctx};
use crate::nnkit::{ParamStore, RealMatrix, Tape, Tensor, Var};

pub const EMBED_DIM: usize = 128;

/// The U2 CNN: `conv3×3 → ReLU → conv3×3 → ReLU → pool2 → flatten → FC 128
/// → FC 1`. Full scale is 32/64 channels on 64×64; smaller widths keep the
/// same topology.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoder {
    pub channels: [usize; 2],
    pub in_size: usize,
    pub prefix: String,
}

impl ImageEncoder {
    pub fn full_scale() -> Self {
        Self::new([32, 64], 64)
    }

    pub fn new(channels: [usize; 2], in_size: usize) -> Self {
        Self {
            channels,
            in_size,
            prefix: "if".into(),
        }
    }

    pub fn flat_dim(&self) -> usize {
        let side = (self.in_size - 4) / 2;
        self.channels[1] * side * side
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng64) -> Result<()> {
        if self.in_size < 6 {
            return Err(Error::Configuration(format!("image side {} too small", self.in_size)));
        }
        let [c1, c2] = self.channels;
        store.insert(self.name("conv1.w"), glorot(rng, &[c1, 3, 3, 3], 27, c1 * 9));
        store.insert(self.name("conv1.b"), constant(&[c1], 0.0));
        store.insert(self.name("conv2.w"), glorot(rng, &[c2, c1, 3, 3], c1 * 9, c2 * 9));
        store.insert(self.name("conv2.b"), constant(&[c2], 0.0));
        init_linear(store, rng, &self.name("fc1"), self.flat_dim(), EMBED_DIM);
        init_linear(store, rng, &self.name("out"), EMBED_DIM, 1);
        Ok(())
    }

    /// `x` is `B × 3 × S × S`; returns `(embedding B × 128, logits B × 1)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, _ctx: &mut Ctx) -> Result<(Var, Var)> {
        let shape = tape.shape(x).to_vec();
        let want = [3, self.in_size, self.in_size];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::dim("if_encode", &want, &shape));
        }
        let b = shape[0];
        let mut h = x;
        for conv in ["conv1", "conv2"] {
            let w = tape.param(store, &self.name(&format!("{conv}.w")))?;
            let bias = tape.param(store, &self.name(&format!("{conv}.b")))?;
            h = tape.conv2d(h, w, bias)?;
            h = tape.relu(h);
        }
        h = tape.max_pool2(h)?;
        h = tape.reshape(h, &[b, self.flat_dim()])?;
        h = linear(tape, store, &self.name("fc1"), h)?;
        let emb = tape.relu(h);
        let logit = linear(tape, store, &self.name("out"), emb)?;
        Ok((emb, logit))
    }
}

/// Evaluation forward over a `3 × S × S` image or a `B × 3 × S × S` batch.
pub fn if_encode(images: &Tensor, encoder: &ImageEncoder, store: &ParamStore) -> Result<(RealMatrix, Vec<f64>)> {
    let mut t = images.clone();
    if t.shape.len() == 3 {
        t.shape.insert(0, 1);
    }
    let mut tape = Tape::new();
    let x = tape.leaf(t);
    let (emb, logit) = encoder.forward(&mut tape, store, x, &mut Ctx::eval())?;
    Ok((tape.value(emb).clone().into_matrix()?, tape.value(logit).data.clone()))
}

use rand::Rng;

use super::init::{constant, glorot, Rng64};
use super::store::ParamStore;
use super::tape::{BatchStats, Tape, Var};
use super::tensor::{RealMatrix, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Per-forward state: train/eval switch, dropout randomness and the batch
/// statistics that training-mode batch norms want folded into running stats.
pub struct Ctx {
    pub training: bool,
    rng: Option<Rng64>,
    bn_updates: Vec<(String, BatchStats)>,
}

impl Ctx {
    pub fn eval() -> Self {
        Self {
            training: false,
            rng: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn train(rng: Rng64) -> Self {
        Self {
            training: true,
            rng: Some(rng),
            bn_updates: Vec::new(),
        }
    }

    /// Training-mode batch statistics without dropout; used by gradient checks.
    pub fn train_deterministic() -> Self {
        Self {
            training: true,
            rng: None,
            bn_updates: Vec::new(),
        }
    }

    /// Folds collected batch statistics into the running buffers.
    pub fn apply_bn_updates(&mut self, store: &mut ParamStore) {
        for (prefix, stats) in self.bn_updates.drain(..) {
            for (suffix, fresh) in [(".running_mean", &stats.mean), (".running_var", &stats.var)] {
                if let Some(buf) = store.get_mut(&format!("{prefix}{suffix}")) {
                    for (r, f) in buf.data.iter_mut().zip(fresh) {
                        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * f;
                    }
                }
            }
        }
    }
}

pub fn init_linear(store: &mut ParamStore, rng: &mut Rng64, prefix: &str, d_in: usize, d_out: usize) {
    store.insert(format!("{prefix}.w"), glorot(rng, &[d_in, d_out], d_in, d_out));
    store.insert(format!("{prefix}.b"), constant(&[d_out], 0.0));
}

pub fn init_linear_zero(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize) {
    store.insert(format!("{prefix}.w"), constant(&[d_in, d_out], 0.0));
    store.insert(format!("{prefix}.b"), constant(&[d_out], 0.0));
}

pub fn linear(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, &format!("{prefix}.w"))?;
    let b = tape.param(store, &format!("{prefix}.b"))?;
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

pub fn init_batch_norm(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.gamma"), constant(&[d], 1.0));
    store.insert(format!("{prefix}.beta"), constant(&[d], 0.0));
    store.insert_buffer(format!("{prefix}.running_mean"), constant(&[d], 0.0));
    store.insert_buffer(format!("{prefix}.running_var"), constant(&[d], 1.0));
}

pub fn batch_norm(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    x: Var,
    ctx: &mut Ctx,
) -> Result<Var> {
    let gamma = tape.param(store, &format!("{prefix}.gamma"))?;
    let beta = tape.param(store, &format!("{prefix}.beta"))?;
    if ctx.training {
        let (y, stats) = tape.batch_norm_train(x, gamma, beta, BN_EPS)?;
        ctx.bn_updates.push((prefix.to_string(), stats));
        Ok(y)
    } else {
        let missing = || Error::Configuration(format!("missing running stats for `{prefix}`"));
        let rm = store.get(&format!("{prefix}.running_mean")).ok_or_else(missing)?;
        let rv = store.get(&format!("{prefix}.running_var")).ok_or_else(missing)?;
        tape.batch_norm_eval(x, gamma, beta, &rm.data, &rv.data, BN_EPS)
    }
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.gamma"), constant(&[d], 1.0));
    store.insert(format!("{prefix}.beta"), constant(&[d], 0.0));
}

pub fn layer_norm(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let gamma = tape.param(store, &format!("{prefix}.gamma"))?;
    let beta = tape.param(store, &format!("{prefix}.beta"))?;
    tape.layer_norm(x, gamma, beta, LN_EPS)
}

/// Inverted dropout; identity outside training or without an RNG.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, ctx: &mut Ctx) -> Result<Var> {
    let Some(rng) = ctx.rng.as_mut().filter(|_| ctx.training && p > 0.0) else {
        return Ok(x);
    };
    let keep = 1.0 - p;
    let mask = (0..tape.value(x).len())
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    tape.mul_const(x, mask)
}

/// `input · W + bias` for a `B × d_in` batch.
pub fn affine_forward(input: &RealMatrix, weights: &RealMatrix, bias: &[f64]) -> Result<RealMatrix> {
    if input.cols() != weights.rows() {
        return Err(Error::dim("affine_forward", &input.shape(), &weights.shape()));
    }
    if bias.len() != weights.cols() {
        return Err(Error::dim("affine_forward bias", &weights.shape(), &[bias.len()]));
    }
    let mut out = input.matmul(weights)?;
    for i in 0..out.rows() {
        for (j, b) in bias.iter().enumerate() {
            out.set(i, j, out.get(i, j) + b);
        }
    }
    Ok(out)
}

/// One convolution stage: `weight[O, C, k, k]`, `bias[O]`.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Applies each convolution (valid, stride 1) followed by ReLU, then one
/// 2×2/stride-2 max pool, to a single `C × H × W` image.
pub fn conv_pool_forward(image: &Tensor, convs: &[ConvLayer]) -> Result<Tensor> {
    if image.shape.len() != 3 {
        return Err(Error::dim("conv_pool_forward", &image.shape, &[3, 0, 0]));
    }
    let mut tape = Tape::new();
    let mut shape = vec![1];
    shape.extend_from_slice(&image.shape);
    let mut x = tape.leaf(Tensor::new(shape, image.data.clone())?);
    for layer in convs {
        let w = tape.leaf(layer.weight.clone());
        let b = tape.leaf(layer.bias.clone());
        x = tape.conv2d(x, w, b)?;
        x = tape.relu(x);
    }
    let pooled = tape.max_pool2(x)?;
    let out = tape.value(pooled);
    Tensor::new(out.shape[1..].to_vec(), out.data.clone())
}

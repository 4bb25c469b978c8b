use super::init::{glorot, Rng64};
use super::store::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Per-head `W_Q_i`, `W_K_i`, `W_V_i` (`d × d/h`) and a shared `W_O` (`d × d`).
pub fn init_mha(store: &mut ParamStore, rng: &mut Rng64, prefix: &str, d: usize, heads: usize) -> Result<()> {
    let dk = head_dim(d, heads)?;
    for i in 0..heads {
        for p in ["q", "k", "v"] {
            store.insert(format!("{prefix}.w{p}{i}"), glorot(rng, &[d, dk], d, dk));
        }
    }
    store.insert(format!("{prefix}.wo"), glorot(rng, &[d, d], d, d));
    Ok(())
}

pub fn head_dim(d: usize, heads: usize) -> Result<usize> {
    if heads == 0 || d % heads != 0 {
        return Err(Error::Configuration(format!(
            "model width {d} is not divisible by {heads} heads"
        )));
    }
    Ok(d / heads)
}

/// Scaled dot-product attention over `h` heads.
///
/// `q` is `B × L_q × d`, `k` and `v` are `B × L_k × d`. `key_mask`, when
/// given, has length `B · L_k`; keys marked false get weight exactly 0.
#[allow(clippy::too_many_arguments)]
pub fn mha(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> Result<Var> {
    let qs = tape.shape(q).to_vec();
    let ks = tape.shape(k).to_vec();
    if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] || tape.shape(v) != ks.as_slice() {
        return Err(Error::dim("multi_head_attention", &qs, &ks));
    }
    let d = qs[2];
    let dk = head_dim(d, heads)?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for i in 0..heads {
        let wq = tape.param(store, &format!("{prefix}.wq{i}"))?;
        let wk = tape.param(store, &format!("{prefix}.wk{i}"))?;
        let wv = tape.param(store, &format!("{prefix}.wv{i}"))?;
        let qh = tape.matmul(q, wq)?;
        let kh = tape.matmul(k, wk)?;
        let vh = tape.matmul(v, wv)?;
        let scores = tape.batch_matmul(qh, kh, true)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.masked_softmax(scores, key_mask)?;
        outs.push(tape.batch_matmul(attn, vh, false)?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 2)? };
    let wo = tape.param(store, &format!("{prefix}.wo"))?;
    tape.matmul(cat, wo)
}

use std::collections::BTreeMap;

use super::store::ParamStore;
use super::tensor::{
    col2im, im2col, matmul_into, matmul_nt_into, matmul_tn_into, Tensor,
};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, frozen: bool },
    Conv2d { x: Var, w: Var, b: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Gather { table: Var, ids: Vec<usize> },
    SelectToken { x: Var, index: usize },
    Mean(Var),
    BceLogits { z: Var, labels: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
}

/// Batch statistics produced by a training-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Append-only record of a forward computation; [`Tape::backward`] replays it
/// in reverse to accumulate gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Records a constant input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records a named trainable parameter taken from `store`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t = store
            .get(name)
            .ok_or_else(|| Error::Configuration(format!("missing parameter `{name}`")))?
            .clone();
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].param = Some(name.to_string());
        Ok(v)
    }

    /// `x[..., k] · w[k, m]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(Error::dim("matmul", &xs, &ws));
        }
        let (k, m) = (ws[0], ws[1]);
        let n = self.value(x).len() / k.max(1);
        let mut out = vec![0.0; n * m];
        matmul_into(&self.value(x).data, &self.value(w).data, &mut out, n, k, m);
        let mut shape = xs;
        *shape.last_mut().unwrap() = m;
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(x, w)))
    }

    /// Batched `a[b, n, k] · b[b, k, m]`, or `a · bᵀ` with `b[b, m, k]` when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] {
            return Err(Error::dim("batch_matmul", &as_, &bs));
        }
        let (bt, n, k) = (as_[0], as_[1], as_[2]);
        let m = if trans_b { bs[1] } else { bs[2] };
        let kb = if trans_b { bs[2] } else { bs[1] };
        if kb != k {
            return Err(Error::dim("batch_matmul", &as_, &bs));
        }
        let mut out = vec![0.0; bt * n * m];
        let (ad, bd) = (&self.value(a).data, &self.value(b).data);
        for i in 0..bt {
            let ai = &ad[i * n * k..(i + 1) * n * k];
            let bi = &bd[i * k * m..(i + 1) * k * m];
            let oi = &mut out[i * n * m..(i + 1) * n * m];
            if trans_b {
                matmul_nt_into(ai, bi, oi, n, k, m);
            } else {
                matmul_into(ai, bi, oi, n, k, m);
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![bt, n, m],
                data: out,
            },
            Op::BatchMatMul { a, b, trans_b },
        ))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let m = self.value(x).last_dim();
        if self.value(b).len() != m {
            return Err(Error::dim("add_bias", self.shape(x), self.shape(b)));
        }
        let bd = &self.value(b).data;
        let mut out = self.value(x).clone();
        for row in out.data.chunks_mut(m) {
            for (o, bv) in row.iter_mut().zip(bd) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o += v;
        }
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o *= v;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `x[B, d] ⊙ g[B, 1]` with the per-row scalar broadcast along features.
    pub fn mul_col(&mut self, x: Var, g: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let gs = self.shape(g).to_vec();
        if xs.len() != 2 || self.value(g).len() != xs[0] {
            return Err(Error::dim("mul_col", &xs, &gs));
        }
        let d = xs[1];
        let mut out = self.value(x).clone();
        for (row, gv) in out.data.chunks_mut(d).zip(&self.value(g).data) {
            for o in row {
                *o *= gv;
            }
        }
        Ok(self.push(out, Op::MulCol(x, g)))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::dim("mul_const", self.shape(x), &[c.len()]));
        }
        let mut out = self.value(x).clone();
        for (o, v) in out.data.iter_mut().zip(&c) {
            *o *= v;
        }
        Ok(self.push(out, Op::MulConst(x, c)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        self.push(out, Op::Sigmoid(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        self.masked_softmax(x, None)
            .expect("unmasked softmax has no shape preconditions")
    }

    /// Softmax over the last axis of `[.., rows_per_group, n]` scores; key `j`
    /// of group `g` is excluded (weight exactly 0) when `mask[g·n + j]` is false.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let n = self.value(x).last_dim();
        let rows = self.value(x).len() / n.max(1);
        let shape = self.shape(x).to_vec();
        let rows_per_group = if shape.len() >= 2 {
            shape[shape.len() - 2]
        } else {
            1
        };
        if let Some(m) = mask {
            if m.len() * rows_per_group != rows * n {
                return Err(Error::dim("masked_softmax", &shape, &[m.len()]));
            }
        }
        let mut out = self.value(x).clone();
        for (r, row) in out.data.chunks_mut(n).enumerate() {
            let keep = |j: usize| mask.is_none_or(|m| m[(r / rows_per_group) * n + j]);
            let mx = (0..n)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                if keep(j) {
                    *v = (*v - mx).exp();
                    sum += *v;
                } else {
                    *v = 0.0;
                }
            }
            if sum > 0.0 {
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let rows = self.value(x).len() / d;
        let mut xhat = self.value(x).data.clone();
        let mut inv_std = Vec::with_capacity(rows);
        for row in xhat.chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for j in 0..d {
                row[j] = row[j] * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor { shape, data: out },
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
        ))
    }

    /// Batch normalization of `x[B, d]` using the batch's own statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || self.value(gamma).len() != xs[1] || self.value(beta).len() != xs[1] {
            return Err(Error::dim("batch_norm", &xs, self.shape(gamma)));
        }
        let (bsz, d) = (xs[0], xs[1]);
        let xd = &self.value(x).data;
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for row in xd.chunks(d) {
            for j in 0..d {
                mean[j] += row[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= bsz as f64);
        for row in xd.chunks(d) {
            for j in 0..d {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= bsz as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let v = self.finish_batch_norm(x, gamma, beta, &mean, inv_std, false);
        Ok((v, BatchStats { mean, var }))
    }

    /// Batch normalization with frozen running statistics (evaluation mode).
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || running_mean.len() != xs[1] || self.value(gamma).len() != xs[1] {
            return Err(Error::dim("batch_norm", &xs, &[running_mean.len()]));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        Ok(self.finish_batch_norm(x, gamma, beta, running_mean, inv_std, true))
    }

    fn finish_batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        frozen: bool,
    ) -> Var {
        let d = mean.len();
        let mut xhat = self.value(x).data.clone();
        for row in xhat.chunks_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for j in 0..d {
                row[j] = row[j] * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor { shape, data: out },
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, frozen },
        )
    }

    /// Valid (unpadded) stride-1 convolution of `x[B, C, H, W]` with
    /// `w[O, C, k, k]` and bias `b[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] {
            return Err(Error::dim("conv2d", &xs, &ws));
        }
        let (bsz, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        if h < k || wd < k {
            return Err(Error::dim("conv2d input smaller than kernel", &xs, &ws));
        }
        if self.value(b).len() != o {
            return Err(Error::dim("conv2d bias", &ws, self.shape(b)));
        }
        let (oh, ow) = (h - k + 1, wd - k + 1);
        let plane = oh * ow;
        let ckk = c * k * k;
        let mut cols = vec![0.0; ckk * plane];
        let mut out = vec![0.0; bsz * o * plane];
        let (xd, wdata, bd) = (&self.value(x).data, &self.value(w).data, &self.value(b).data);
        for bi in 0..bsz {
            im2col(&xd[bi * c * h * wd..(bi + 1) * c * h * wd], c, h, wd, k, &mut cols);
            let ob = &mut out[bi * o * plane..(bi + 1) * o * plane];
            for (oc, chunk) in ob.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bd[oc]);
            }
            matmul_into(wdata, &cols, ob, o, ckk, plane);
        }
        Ok(self.push(
            Tensor {
                shape: vec![bsz, o, oh, ow],
                data: out,
            },
            Op::Conv2d { x, w, b },
        ))
    }

    /// 2×2 max pooling with stride 2 over `x[B, C, H, W]` (odd edges dropped).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(Error::dim("max_pool2", &xs, &[2, 2]));
        }
        let (bsz, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (ph, pw) = (h / 2, w / 2);
        let xd = &self.value(x).data;
        let mut out = Vec::with_capacity(bsz * c * ph * pw);
        let mut argmax = Vec::with_capacity(bsz * c * ph * pw);
        for plane in 0..bsz * c {
            let base = plane * h * w;
            for y in 0..ph {
                for xx in 0..pw {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![bsz, c, ph, pw],
                data: out,
            },
            Op::MaxPool2 { x, argmax },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::dim("reshape", self.shape(x), shape));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: self.value(x).data.clone(),
        };
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat axis", &first, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(Error::dim("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(Error::dim("slice", &xs, &[axis, start, len]));
        }
        let (outer, inner) = outer_inner(&xs, axis);
        let full = xs[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            data.extend_from_slice(&self.value(x).data[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        Ok(self.push(Tensor { shape, data }, Op::Slice { x, axis, start }))
    }

    /// Row lookup `table[ids[i]]` producing `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::dim("gather", &ts, &[2]));
        }
        let d = ts[1];
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= ts[0] {
                return Err(Error::Vocabulary { id, size: ts[0] });
            }
            data.extend_from_slice(&self.value(table).data[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            Tensor {
                shape: vec![ids.len(), d],
                data,
            },
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// `x[B, L, d]` → `x[:, index, :]`.
    pub fn select_token(&mut self, x: Var, index: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || index >= xs[1] {
            return Err(Error::dim("select_token", &xs, &[index]));
        }
        let (b, l, d) = (xs[0], xs[1], xs[2]);
        let mut data = Vec::with_capacity(b * d);
        for bi in 0..b {
            let base = (bi * l + index) * d;
            data.extend_from_slice(&self.value(x).data[base..base + d]);
        }
        Ok(self.push(
            Tensor {
                shape: vec![b, d],
                data,
            },
            Op::SelectToken { x, index },
        ))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data.iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Mean binary cross-entropy on logits in the overflow-free form
    /// `max(z,0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, z: Var, labels: &[f64]) -> Result<Var> {
        let loss = super::loss::bce_logits_value(&self.value(z).data, labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                z,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Sums gradients of every recorded parameter by name.
    pub fn param_grads(&self) -> Grads {
        let mut out = Grads::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let (Some(name), Some(g)) = (&node.param, self.grads.get(i).and_then(Option::as_ref))
            else {
                continue;
            };
            match out.get_mut(name) {
                Some(acc) => {
                    for (a, v) in acc.data.iter_mut().zip(&g.data) {
                        *a += v;
                    }
                }
                None => {
                    out.insert(name.clone(), g.clone());
                }
            }
        }
        out
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward requires a scalar", self.shape(loss), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(&nodes[v.0].value.shape));
            f(&mut slot.data);
        };
        let gd = &g.data;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let ws = &val(*w).shape;
                let (k, m) = (ws[0], ws[1]);
                let n = val(*x).len() / k.max(1);
                let wd = &val(*w).data;
                let xd = &val(*x).data;
                acc(*x, &mut |gx| matmul_nt_into(gd, wd, gx, n, m, k));
                acc(*w, &mut |gw| matmul_tn_into(xd, gd, gw, n, k, m));
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let as_ = &val(*a).shape;
                let (bt, n, k) = (as_[0], as_[1], as_[2]);
                let m = g.shape[2];
                let ad = &val(*a).data;
                let bd = &val(*b).data;
                acc(*a, &mut |ga| {
                    for t in 0..bt {
                        let gi = &gd[t * n * m..(t + 1) * n * m];
                        let bi = &bd[t * k * m..(t + 1) * k * m];
                        let gai = &mut ga[t * n * k..(t + 1) * n * k];
                        if *trans_b {
                            matmul_into(gi, bi, gai, n, m, k);
                        } else {
                            matmul_nt_into(gi, bi, gai, n, m, k);
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for t in 0..bt {
                        let gi = &gd[t * n * m..(t + 1) * n * m];
                        let ai = &ad[t * n * k..(t + 1) * n * k];
                        let gbi = &mut gb[t * k * m..(t + 1) * k * m];
                        if *trans_b {
                            matmul_tn_into(gi, ai, gbi, n, m, k);
                        } else {
                            matmul_tn_into(ai, gi, gbi, n, k, m);
                        }
                    }
                });
            }
            Op::AddBias(x, b) => {
                let m = val(*b).len();
                acc(*x, &mut |gx| gx.iter_mut().zip(gd).for_each(|(a, v)| *a += v));
                acc(*b, &mut |gb| {
                    for row in gd.chunks(m) {
                        gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(gd).for_each(|(s, v)| *s += v));
                acc(*b, &mut |gb| gb.iter_mut().zip(gd).for_each(|(s, v)| *s += v));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (&val(*a).data, &val(*b).data);
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += gd[j] * bd[j];
                    }
                });
                acc(*b, &mut |gb| {
                    for j in 0..gb.len() {
                        gb[j] += gd[j] * ad[j];
                    }
                });
            }
            Op::MulCol(x, gate) => {
                let d = val(*x).shape[1];
                let (xd, gtd) = (&val(*x).data, &val(*gate).data);
                acc(*x, &mut |gx| {
                    for (r, row) in gx.chunks_mut(d).enumerate() {
                        for j in 0..d {
                            row[j] += gd[r * d + j] * gtd[r];
                        }
                    }
                });
                acc(*gate, &mut |gg| {
                    for (r, s) in gg.iter_mut().enumerate() {
                        *s += (0..d).map(|j| gd[r * d + j] * xd[r * d + j]).sum::<f64>();
                    }
                });
            }
            Op::MulConst(x, c) => {
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        gx[j] += gd[j] * c[j];
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(gd).for_each(|(a, v)| *a += v * c));
            }
            Op::Relu(x) => {
                let xd = &val(*x).data;
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        if xd[j] > 0.0 {
                            gx[j] += gd[j];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yd = &nodes[i].value.data;
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        gx[j] += gd[j] * yd[j] * (1.0 - yd[j]);
                    }
                });
            }
            Op::Softmax(x) => {
                let yd = &nodes[i].value.data;
                let n = nodes[i].value.last_dim();
                acc(*x, &mut |gx| {
                    for ((gxr, yr), gr) in gx.chunks_mut(n).zip(yd.chunks(n)).zip(gd.chunks(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..n {
                            gxr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = val(*gamma).len();
                let gm = &val(*gamma).data;
                acc(*gamma, &mut |gg| {
                    for (gr, xr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for gr in gd.chunks(d) {
                        gb.iter_mut().zip(gr).for_each(|(a, v)| *a += v);
                    }
                });
                acc(*x, &mut |gx| {
                    for (r, ((gxr, gr), xr)) in gx
                        .chunks_mut(d)
                        .zip(gd.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        let gh: Vec<f64> = (0..d).map(|j| gr[j] * gm[j]).collect();
                        let s1: f64 = gh.iter().sum();
                        let s2: f64 = gh.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / d as f64;
                        for j in 0..d {
                            gxr[j] += k * (d as f64 * gh[j] - s1 - xr[j] * s2);
                        }
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, frozen } => {
                let d = val(*gamma).len();
                let bsz = xhat.len() / d;
                let gm = &val(*gamma).data;
                acc(*gamma, &mut |gg| {
                    for (gr, xr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for gr in gd.chunks(d) {
                        gb.iter_mut().zip(gr).for_each(|(a, v)| *a += v);
                    }
                });
                acc(*x, &mut |gx| {
                    if *frozen {
                        for (gxr, gr) in gx.chunks_mut(d).zip(gd.chunks(d)) {
                            for j in 0..d {
                                gxr[j] += gr[j] * gm[j] * inv_std[j];
                            }
                        }
                        return;
                    }
                    let mut s1 = vec![0.0; d];
                    let mut s2 = vec![0.0; d];
                    for (gr, xr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            let gh = gr[j] * gm[j];
                            s1[j] += gh;
                            s2[j] += gh * xr[j];
                        }
                    }
                    let n = bsz as f64;
                    for ((gxr, gr), xr) in gx.chunks_mut(d).zip(gd.chunks(d)).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            let gh = gr[j] * gm[j];
                            gxr[j] += inv_std[j] / n * (n * gh - s1[j] - xr[j] * s2[j]);
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b } => {
                let xs = &val(*x).shape;
                let ws = &val(*w).shape;
                let (bsz, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (o, k) = (ws[0], ws[2]);
                let plane = (h - k + 1) * (wd - k + 1);
                let ckk = c * k * k;
                let xd = &val(*x).data;
                let wdat = &val(*w).data;
                let mut cols = vec![0.0; ckk * plane];
                let mut gcols = vec![0.0; ckk * plane];
                let mut gw_acc = vec![0.0; o * ckk];
                let mut gx_acc = vec![0.0; xd.len()];
                for bi in 0..bsz {
                    let gb = &gd[bi * o * plane..(bi + 1) * o * plane];
                    let xi = &xd[bi * c * h * wd..(bi + 1) * c * h * wd];
                    im2col(xi, c, h, wd, k, &mut cols);
                    matmul_nt_into(gb, &cols, &mut gw_acc, o, plane, ckk);
                    gcols.iter_mut().for_each(|v| *v = 0.0);
                    matmul_tn_into(wdat, gb, &mut gcols, o, ckk, plane);
                    col2im(
                        &gcols,
                        c,
                        h,
                        wd,
                        k,
                        &mut gx_acc[bi * c * h * wd..(bi + 1) * c * h * wd],
                    );
                }
                acc(*w, &mut |gw| gw.iter_mut().zip(&gw_acc).for_each(|(a, v)| *a += v));
                acc(*x, &mut |gx| gx.iter_mut().zip(&gx_acc).for_each(|(a, v)| *a += v));
                acc(*b, &mut |gbias| {
                    for bi in 0..bsz {
                        for oc in 0..o {
                            let base = (bi * o + oc) * plane;
                            gbias[oc] += gd[base..base + plane].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::MaxPool2 { x, argmax } => {
                acc(*x, &mut |gx| {
                    for (j, &src) in argmax.iter().enumerate() {
                        gx[src] += gd[j];
                    }
                });
            }
            Op::Reshape(x) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(gd).for_each(|(a, v)| *a += v));
            }
            Op::Concat { parts, axis } => {
                let (outer, inner) = outer_inner(&g.shape, *axis);
                let total = g.shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).shape[*axis] * inner;
                    acc(p, &mut |gp| {
                        for o in 0..outer {
                            let src = &gd[o * total + offset..o * total + offset + len];
                            gp[o * len..(o + 1) * len]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, v)| *a += v);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = &val(*x).shape;
                let (outer, inner) = outer_inner(xs, *axis);
                let full = xs[*axis] * inner;
                let len = g.shape[*axis] * inner;
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        let base = o * full + start * inner;
                        gx[base..base + len]
                            .iter_mut()
                            .zip(&gd[o * len..(o + 1) * len])
                            .for_each(|(a, v)| *a += v);
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = val(*table).shape[1];
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        gt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&gd[r * d..(r + 1) * d])
                            .for_each(|(a, v)| *a += v);
                    }
                });
            }
            Op::SelectToken { x, index } => {
                let xs = &val(*x).shape;
                let (b, l, d) = (xs[0], xs[1], xs[2]);
                acc(*x, &mut |gx| {
                    for bi in 0..b {
                        let base = (bi * l + index) * d;
                        gx[base..base + d]
                            .iter_mut()
                            .zip(&gd[bi * d..(bi + 1) * d])
                            .for_each(|(a, v)| *a += v);
                    }
                });
            }
            Op::Mean(x) => {
                let n = val(*x).len().max(1) as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += gd[0] / n));
            }
            Op::BceLogits { z, labels } => {
                let zd = &val(*z).data;
                let n = zd.len() as f64;
                acc(*z, &mut |gz| {
                    for j in 0..gz.len() {
                        gz[j] += gd[0] * (sigmoid(zd[j]) - labels[j]) / n;
                    }
                });
            }
        }
    }
}

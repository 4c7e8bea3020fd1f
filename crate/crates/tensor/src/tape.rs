//! Reverse-mode autodiff tape.
//!
//! Every op appends a node holding its forward value and enough context for
//! its backward rule. Nodes are appended in evaluation order, so the node
//! vector is already a topological order and `backward` walks it in reverse.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernels::{gelu, gelu_grad, gemm, softmax_row, MatView};
use crate::param::{ParamId, ParamStore};
use crate::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    AddScalar(Var),
    Gelu(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Permute { x: Var, axes: Vec<usize> },
    Reshape(Var),
    Narrow { x: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Expand(Var),
    Unfold1d { x: Var, kernel: usize, stride: usize },
    MeanAxis { x: Var, axis: usize },
    SumAll(Var),
    MeanAll(Var),
    SumLast(Var),
    L2Normalize { x: Var, eps: f64, norms: Vec<f64> },
    WeightedCe { logits: Var, weights: Var, labels: Vec<usize>, mask: Vec<f64>, probs: Vec<f64>, losses: Vec<f64>, denom: f64 },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to the parameters it reached.
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    /// Gradient for `id`, or zeros of the parameter's shape when the loss did not reach it.
    pub fn get_or_zeros(&self, id: ParamId, store: &ParamStore) -> Tensor {
        self.by_param
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Add these gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in &self.by_param {
            store.get_mut(*id).grad.add_assign(g);
        }
    }
}

/// Records a forward computation for a single reverse pass.
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    record_grads: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn mismatch(msg: String) -> TensorError {
    TensorError::ShapeMismatch(msg)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            record_grads: true,
        }
    }

    /// A tape that never tracks gradients; parameters enter as constants.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            record_grads: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad: needs_grad && self.record_grads,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Reference a parameter; frozen parameters behave as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let needs = !p.is_frozen() && self.record_grads;
        self.nodes.push(Node {
            value: p.shared_value(),
            op: Op::Param(id),
            needs_grad: needs,
        });
        Var(self.nodes.len() - 1)
    }

    /// Batched matrix product `a @ b` (or `a @ b^T` when `trans_b`).
    ///
    /// `a` is `[.., m, k]`. A rank-2 `b` is shared across all leading dims of
    /// `a`; otherwise `b` must carry the same leading dims as `a`.
    pub fn matmul_ext(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch(format!("matmul needs rank >= 2, got {sa:?} and {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(mismatch(format!("matmul inner dims differ: {sa:?} x {sb:?} (trans_b={trans_b})")));
        }
        let va = Arc::clone(&self.nodes[a.0].value);
        let vb = Arc::clone(&self.nodes[b.0].value);
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![0.0; out_shape.iter().product()];
        if sb.len() == 2 {
            let rows: usize = sa[..sa.len() - 1].iter().product();
            let bm = MatView::new(vb.data(), sb[0], sb[1]);
            let bm = if trans_b { bm.t() } else { bm };
            gemm(MatView::new(va.data(), rows, k), bm, 0.0, &mut out);
        } else {
            if sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(mismatch(format!("matmul batch dims differ: {sa:?} x {sb:?}")));
            }
            let batch: usize = sa[..sa.len() - 2].iter().product();
            let (br, bc) = (sb[sb.len() - 2], sb[sb.len() - 1]);
            for i in 0..batch {
                let am = MatView::new(&va.data()[i * m * k..(i + 1) * m * k], m, k);
                let bm = MatView::new(&vb.data()[i * br * bc..(i + 1) * br * bc], br, bc);
                let bm = if trans_b { bm.t() } else { bm };
                gemm(am, bm, 0.0, &mut out[i * m * n..(i + 1) * m * n]);
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::MatMul { a, b, trans_b }, needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ext(a, b, false)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, name: &str) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(format!("{name}: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    /// `x + bias` where `bias`'s shape is a trailing suffix of `x`'s shape.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (sx, sb) = (vx.shape(), vb.shape());
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return Err(mismatch(format!("add_bias: {sb:?} is not a suffix of {sx:?}")));
        }
        let n = vb.len();
        let mut data = vx.data().to_vec();
        if n > 0 {
            for chunk in data.chunks_mut(n) {
                for (d, b) in chunk.iter_mut().zip(vb.data()) {
                    *d += b;
                }
            }
        }
        let t = Tensor::new(sx, data)?;
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(t, Op::AddBias { x, bias }, needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x).map(|v| v * factor);
        let needs = self.needs(x);
        self.push(t, Op::Scale { x, factor }, needs)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v + c);
        let needs = self.needs(x);
        self.push(t, Op::AddScalar(x), needs)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu);
        let needs = self.needs(x);
        self.push(t, Op::Gelu(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        let needs = self.needs(x);
        self.push(t, Op::Tanh(x), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(t, Op::Relu(x), needs)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let d = vx.last_dim();
        let mut out = vec![0.0; vx.len()];
        for (row, o) in vx.data().chunks(d).zip(out.chunks_mut(d)) {
            softmax_row(row, o);
        }
        let t = Tensor::new(vx.shape(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(t, Op::Softmax(x), needs)
    }

    /// Layer normalization over the last axis with affine `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let vx = Arc::clone(&self.nodes[x.0].value);
        let d = vx.last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(mismatch(format!(
                "layer_norm: features {d}, gain {:?}, bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let rows = vx.len() / d;
        let mut xhat = vec![0.0; vx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; vx.len()];
        for r in 0..rows {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let denom = var + eps;
            let is = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(vx.shape(), out)?;
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, inv_std }, needs))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(mismatch(format!("permute axes {axes:?} invalid for {shape:?}")));
        }
        let out = permute_data(self.value(x), axes);
        let needs = self.needs(x);
        Ok(self.push(out, Op::Permute { x, axes: axes.to_vec() }, needs))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(mismatch("transpose needs rank >= 2".into()));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let shape = vx.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(mismatch(format!("narrow({axis}, {start}, {len}) out of range for {shape:?}")));
        }
        let (outer, alen, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            out.extend_from_slice(&vx.data()[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(&out_shape, out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Narrow { x, axis, start }, needs))
    }

    /// Concatenate along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| mismatch("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(mismatch(format!("concat axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(mismatch(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let len = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let t = Tensor::new(&out_shape, out)?;
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(t, Op::Concat { parts: parts.to_vec(), axis }, needs))
    }

    /// Repeat `x` `n` times along a new leading axis.
    pub fn expand(&mut self, x: Var, n: usize) -> Var {
        let vx = self.value(x);
        let mut shape = vec![n];
        shape.extend_from_slice(vx.shape());
        let mut out = Vec::with_capacity(n * vx.len());
        for _ in 0..n {
            out.extend_from_slice(vx.data());
        }
        let t = Tensor::new(&shape, out).expect("expanded shape");
        let needs = self.needs(x);
        self.push(t, Op::Expand(x), needs)
    }

    /// Sliding windows for strided 1-D convolution: `[B, L, C] -> [B, L_out, kernel*C]`.
    pub fn unfold1d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || kernel == 0 || stride == 0 || shape[1] < kernel {
            return Err(mismatch(format!("unfold1d(kernel={kernel}, stride={stride}) on {shape:?}")));
        }
        let (b, l, c) = (shape[0], shape[1], shape[2]);
        let lout = conv_out_len(l, kernel, stride);
        let vx = self.value(x);
        let mut out = Vec::with_capacity(b * lout * kernel * c);
        for bi in 0..b {
            for t in 0..lout {
                let s = (bi * l + t * stride) * c;
                out.extend_from_slice(&vx.data()[s..s + kernel * c]);
            }
        }
        let t = Tensor::new(&[b, lout, kernel * c], out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Unfold1d { x, kernel, stride }, needs))
    }

    /// Mean along `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(mismatch(format!("mean_axis({axis}) on {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let vx = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &vx.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        for v in &mut out {
            *v /= len as f64;
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let t = Tensor::new(&out_shape, out)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::MeanAxis { x, axis }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(t, Op::SumAll(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::scalar(v.sum() / v.len().max(1) as f64);
        let needs = self.needs(x);
        self.push(t, Op::MeanAll(x), needs)
    }

    /// Sum over the last axis, removing it.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let d = v.last_dim();
        let data: Vec<f64> = v.data().chunks(d).map(|r| r.iter().sum()).collect();
        let mut shape = v.shape().to_vec();
        shape.pop();
        let t = Tensor::new(&shape, data).expect("reduced shape");
        let needs = self.needs(x);
        self.push(t, Op::SumLast(x), needs)
    }

    /// Divide each last-axis vector by `max(norm, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x);
        let d = v.last_dim();
        let mut norms = Vec::with_capacity(v.len() / d.max(1));
        let mut out = Vec::with_capacity(v.len());
        for row in v.data().chunks(d) {
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            let denom = n.max(eps);
            norms.push(n);
            out.extend(row.iter().map(|a| a / denom));
        }
        let t = Tensor::new(v.shape(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(t, Op::L2Normalize { x, eps, norms }, needs)
    }

    /// Cosine similarity of matching last-axis vectors, guarded by `max(norm, 1e-8)`.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        let nu = self.l2_normalize(u, COSINE_EPS);
        let nv = self.l2_normalize(v, COSINE_EPS);
        let prod = self.mul(nu, nv)?;
        Ok(self.sum_last(prod))
    }

    /// Class-weighted cross entropy, normalized by the total active weight.
    ///
    /// `loss = sum_i mask_i w[y_i] nll_i / sum_i mask_i w[y_i]`.
    pub fn weighted_cross_entropy(&mut self, logits: Var, weights: Var, labels: &[usize], mask: &[f64]) -> Result<Var> {
        let vl = self.value(logits);
        let vw = self.value(weights);
        if vl.rank() != 2 {
            return Err(mismatch(format!("logits must be [B, C], got {:?}", vl.shape())));
        }
        let (b, c) = (vl.shape()[0], vl.shape()[1]);
        if vw.shape() != [c] || labels.len() != b || mask.len() != b {
            return Err(mismatch(format!(
                "cross entropy: logits {:?}, weights {:?}, {} labels, {} mask",
                vl.shape(),
                vw.shape(),
                labels.len(),
                mask.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(TensorError::LabelOutOfRange { label: bad, classes: c });
        }
        if vw.data().iter().any(|&w| w <= 0.0) {
            return Err(TensorError::NonPositiveWeight);
        }
        if mask.iter().sum::<f64>() <= 0.0 {
            return Err(TensorError::EmptyBatch);
        }
        let mut probs = vec![0.0; b * c];
        let mut losses = vec![0.0; b];
        let mut num = 0.0;
        let mut denom = 0.0;
        for i in 0..b {
            let row = &vl.data()[i * c..(i + 1) * c];
            softmax_row(row, &mut probs[i * c..(i + 1) * c]);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            losses[i] = lse - row[labels[i]];
            let w = mask[i] * vw.data()[labels[i]];
            num += w * losses[i];
            denom += w;
        }
        let t = Tensor::scalar(num / denom);
        let needs = self.needs(logits) || self.needs(weights);
        Ok(self.push(
            t,
            Op::WeightedCe {
                logits,
                weights,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                probs,
                losses,
                denom,
            },
            needs,
        ))
    }

    /// Inverted dropout with a mask drawn from a stream keyed by `key`.
    pub fn dropout(&mut self, x: Var, rate: f64, key: u64) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(TensorError::InvalidArgument(format!("dropout rate {rate} must be < 1")));
        }
        let shape = self.shape(x).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let m = self.constant(Tensor::new(&shape, mask)?);
        self.mul(x, m)
    }

    /// Reverse pass from a scalar `loss`. A tape supports exactly one reverse pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::StaleTape);
        }
        let lv = Arc::clone(&self.nodes[loss.0].value);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients::default();
        if !self.nodes[loss.0].needs_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(Tensor::new(lv.shape(), vec![1.0])?);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn backprop_node(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) -> Result<()> {
        let nodes = &self.nodes;
        let mut send = |v: Var, t: Tensor| {
            if nodes[v.0].needs_grad {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            }
        };
        let val = |v: Var| -> &Tensor { &nodes[v.0].value };
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => match out.by_param.get_mut(id) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    out.by_param.insert(*id, g);
                }
            },
            Op::MatMul { a, b, trans_b } => {
                let (va, vb) = (val(*a), val(*b));
                let (sa, sb) = (va.shape(), vb.shape());
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = g.last_dim();
                if sb.len() == 2 {
                    let rows: usize = sa[..sa.len() - 1].iter().product();
                    let gm = MatView::new(g.data(), rows, n);
                    let bm = MatView::new(vb.data(), sb[0], sb[1]);
                    if nodes[a.0].needs_grad {
                        let mut da = vec![0.0; va.len()];
                        // dA = dC * B^T  (B stored [k, n]) or dC * Bs (Bs stored [n, k])
                        gemm(gm, if *trans_b { bm } else { bm.t() }, 0.0, &mut da);
                        send(*a, Tensor::new(sa, da)?);
                    }
                    if nodes[b.0].needs_grad {
                        let mut db = vec![0.0; vb.len()];
                        let am = MatView::new(va.data(), rows, k);
                        if *trans_b {
                            gemm(gm.t(), am, 0.0, &mut db);
                        } else {
                            gemm(am.t(), gm, 0.0, &mut db);
                        }
                        send(*b, Tensor::new(sb, db)?);
                    }
                } else {
                    let batch = va.len() / (m * k).max(1);
                    let (br, bc) = (sb[sb.len() - 2], sb[sb.len() - 1]);
                    let mut da = if nodes[a.0].needs_grad { Some(vec![0.0; va.len()]) } else { None };
                    let mut db = if nodes[b.0].needs_grad { Some(vec![0.0; vb.len()]) } else { None };
                    for i in 0..batch {
                        let gm = MatView::new(&g.data()[i * m * n..(i + 1) * m * n], m, n);
                        let am = MatView::new(&va.data()[i * m * k..(i + 1) * m * k], m, k);
                        let bm = MatView::new(&vb.data()[i * br * bc..(i + 1) * br * bc], br, bc);
                        if let Some(da) = da.as_mut() {
                            let dst = &mut da[i * m * k..(i + 1) * m * k];
                            gemm(gm, if *trans_b { bm } else { bm.t() }, 0.0, dst);
                        }
                        if let Some(db) = db.as_mut() {
                            let dst = &mut db[i * br * bc..(i + 1) * br * bc];
                            if *trans_b {
                                gemm(gm.t(), am, 0.0, dst);
                            } else {
                                gemm(am.t(), gm, 0.0, dst);
                            }
                        }
                    }
                    if let Some(da) = da {
                        send(*a, Tensor::new(sa, da)?);
                    }
                    if let Some(db) = db {
                        send(*b, Tensor::new(sb, db)?);
                    }
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g);
            }
            Op::Sub(a, b) => {
                send(*b, g.map(|x| -x));
                send(*a, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if nodes[a.0].needs_grad {
                    let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    send(*a, Tensor::new(g.shape(), d)?);
                }
                if nodes[b.0].needs_grad {
                    let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    send(*b, Tensor::new(g.shape(), d)?);
                }
            }
            Op::AddBias { x, bias } => {
                if nodes[bias.0].needs_grad {
                    let vb = val(*bias);
                    let n = vb.len();
                    let mut db = vec![0.0; n];
                    if n > 0 {
                        for chunk in g.data().chunks(n) {
                            for (d, v) in db.iter_mut().zip(chunk) {
                                *d += v;
                            }
                        }
                    }
                    send(*bias, Tensor::new(vb.shape(), db)?);
                }
                send(*x, g);
            }
            Op::Scale { x, factor } => send(*x, g.map(|v| v * factor)),
            Op::AddScalar(x) => send(*x, g),
            Op::Gelu(x) => {
                let d = g.data().iter().zip(val(*x).data()).map(|(gv, xv)| gv * gelu_grad(*xv)).collect();
                send(*x, Tensor::new(g.shape(), d)?);
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let d = g.data().iter().zip(y.data()).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                send(*x, Tensor::new(g.shape(), d)?);
            }
            Op::Relu(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(val(*x).data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                send(*x, Tensor::new(g.shape(), d)?);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let d = y.last_dim();
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.data().chunks(d).zip(g.data().chunks(d)).zip(dx.chunks_mut(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                send(*x, Tensor::new(y.shape(), dx)?);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = g.last_dim();
                let gv = val(*gain).data();
                if nodes[gain.0].needs_grad || nodes[bias.0].needs_grad {
                    let mut dg = vec![0.0; d];
                    let mut dbias = vec![0.0; d];
                    for (gr, hr) in g.data().chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                            dbias[j] += gr[j];
                        }
                    }
                    send(*gain, Tensor::new(&[d], dg)?);
                    send(*bias, Tensor::new(&[d], dbias)?);
                }
                if nodes[x.0].needs_grad {
                    let mut dx = vec![0.0; g.len()];
                    for (r, ((gr, hr), dr)) in g.data().chunks(d).zip(xhat.chunks(d)).zip(dx.chunks_mut(d)).enumerate() {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            dr[j] = inv_std[r] * (gr[j] * gv[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    send(*x, Tensor::new(g.shape(), dx)?);
                }
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                send(*x, permute_data(&g, &inverse));
            }
            Op::Reshape(x) => send(*x, g.reshape(val(*x).shape())?),
            Op::Narrow { x, axis, start } => {
                let sx = val(*x).shape();
                let (outer, alen, inner) = split_axis(sx, *axis);
                let len = g.shape()[*axis];
                let mut dx = vec![0.0; val(*x).len()];
                for o in 0..outer {
                    let base = o * alen * inner + start * inner;
                    dx[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                send(*x, Tensor::new(sx, dx)?);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let sp = val(*p).shape();
                    let len = sp[*axis];
                    if nodes[p.0].needs_grad {
                        let mut dp = Vec::with_capacity(val(*p).len());
                        for o in 0..outer {
                            let s = (o * total + offset) * inner;
                            dp.extend_from_slice(&g.data()[s..s + len * inner]);
                        }
                        send(*p, Tensor::new(sp, dp)?);
                    }
                    offset += len;
                }
            }
            Op::Expand(x) => {
                let n = val(*x).len();
                let mut dx = vec![0.0; n];
                if n > 0 {
                    for chunk in g.data().chunks(n) {
                        for (d, v) in dx.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                }
                send(*x, Tensor::new(val(*x).shape(), dx)?);
            }
            Op::Unfold1d { x, kernel, stride } => {
                let sx = val(*x).shape();
                let (b, l, c) = (sx[0], sx[1], sx[2]);
                let lout = g.shape()[1];
                let w = kernel * c;
                let mut dx = vec![0.0; b * l * c];
                for bi in 0..b {
                    for t in 0..lout {
                        let src = &g.data()[(bi * lout + t) * w..(bi * lout + t + 1) * w];
                        let s = (bi * l + t * stride) * c;
                        for (d, v) in dx[s..s + w].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
                send(*x, Tensor::new(sx, dx)?);
            }
            Op::MeanAxis { x, axis } => {
                let sx = val(*x).shape();
                let (outer, len, inner) = split_axis(sx, *axis);
                let mut dx = vec![0.0; val(*x).len()];
                let inv = 1.0 / len as f64;
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        for (d, s) in dx[(o * len + a) * inner..(o * len + a + 1) * inner].iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                }
                send(*x, Tensor::new(sx, dx)?);
            }
            Op::SumAll(x) => {
                let gv = g.data()[0];
                send(*x, Tensor::full(val(*x).shape(), gv));
            }
            Op::MeanAll(x) => {
                let n = val(*x).len().max(1) as f64;
                send(*x, Tensor::full(val(*x).shape(), g.data()[0] / n));
            }
            Op::SumLast(x) => {
                let sx = val(*x).shape();
                let d = val(*x).last_dim();
                let mut dx = Vec::with_capacity(val(*x).len());
                for &gv in g.data() {
                    dx.extend(std::iter::repeat(gv).take(d));
                }
                send(*x, Tensor::new(sx, dx)?);
            }
            Op::L2Normalize { x, eps, norms } => {
                let y = &node.value;
                let d = y.last_dim();
                let mut dx = vec![0.0; y.len()];
                for (r, ((yr, gr), dr)) in y.data().chunks(d).zip(g.data().chunks(d)).zip(dx.chunks_mut(d)).enumerate() {
                    let n = norms[r];
                    if n > *eps {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dr[j] = (gr[j] - yr[j] * dot) / n;
                        }
                    } else {
                        for j in 0..d {
                            dr[j] = gr[j] / eps;
                        }
                    }
                }
                send(*x, Tensor::new(y.shape(), dx)?);
            }
            Op::WeightedCe { logits, weights, labels, mask, probs, losses, denom } => {
                let gv = g.data()[0];
                let loss = node.value.data()[0];
                let vw = val(*weights).data();
                let c = vw.len();
                if nodes[logits.0].needs_grad {
                    let mut dl = vec![0.0; probs.len()];
                    for (i, &y) in labels.iter().enumerate() {
                        let f = gv * mask[i] * vw[y] / denom;
                        for j in 0..c {
                            dl[i * c + j] = f * (probs[i * c + j] - if j == y { 1.0 } else { 0.0 });
                        }
                    }
                    send(*logits, Tensor::new(val(*logits).shape(), dl)?);
                }
                if nodes[weights.0].needs_grad {
                    let mut dw = vec![0.0; c];
                    for (i, &y) in labels.iter().enumerate() {
                        dw[y] += gv * mask[i] * (losses[i] - loss) / denom;
                    }
                    send(*weights, Tensor::new(&[c], dw)?);
                }
            }
        }
        Ok(())
    }
}

/// Norm floor used by [`Tape::cosine_similarity`].
pub const COSINE_EPS: f64 = 1e-8;

/// Output length of a valid (unpadded) strided convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize) -> usize {
    if len < kernel {
        0
    } else {
        (len - kernel) / stride + 1
    }
}

fn permute_data(t: &Tensor, axes: &[usize]) -> Tensor {
    let shape = t.shape();
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = t.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let src = t.data();
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(src[offset]);
        // odometer increment over output indices
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(&out_shape, out).expect("permuted shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::eye(3));
        let x = tape.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn hand_matmul() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_rejects_bad_inner() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch(_))));
        assert!(tape.matmul_ext(a, b, true).is_ok());
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax(x);
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(t(&[2], &[1000.0, 0.0]));
        let y = tape.softmax(x);
        let d = tape.value(y).data();
        assert!((d[0] - 1.0).abs() < 1e-12 && d[1] < 1e-12);
    }

    #[test]
    fn layer_norm_constant_vector_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 4], 3.5));
        let g = tape.constant(Tensor::ones(&[4]));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", t(&[3], &[1.0, -2.0, 0.5])).unwrap();
        let unused = store.add("u", Tensor::ones(&[2])).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let sq = tape.mul(wv, wv).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, -4.0, 1.0]);
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(unused, &store).data(), &[0.0, 0.0]);
    }

    #[test]
    fn second_backward_is_stale() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::ones(&[2])).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let loss = tape.sum(wv);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(TensorError::StaleTape)));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::ones(&[2])).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        assert!(matches!(tape.backward(wv), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::ones(&[2])).unwrap();
        store.set_frozen(w, true);
        let v = store.add("v", Tensor::ones(&[2])).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let vv = tape.param(&store, v);
        let p = tape.mul(wv, vv).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(w).is_none());
        assert!(grads.get(v).is_some());
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[1, 2]));
        let w = tape.constant(Tensor::ones(&[2]));
        let l = tape.weighted_cross_entropy(logits, w, &[1], &[1.0]).unwrap();
        assert!((tape.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_all_masked_is_empty_batch() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::zeros(&[2, 3]));
        let w = tape.constant(Tensor::ones(&[3]));
        let r = tape.weighted_cross_entropy(logits, w, &[0, 1], &[0.0, 0.0]);
        assert!(matches!(r, Err(TensorError::EmptyBatch)));
    }

    #[test]
    fn cosine_cases() {
        let mut tape = Tape::new();
        let u = tape.constant(t(&[2], &[1.0, 2.0]));
        let v = tape.constant(t(&[2], &[-2.0, 1.0]));
        let nu = tape.scale(u, -1.0);
        let same = tape.cosine_similarity(u, u).unwrap();
        let orth = tape.cosine_similarity(u, v).unwrap();
        let opp = tape.cosine_similarity(u, nu).unwrap();
        assert!((tape.value(same).item().unwrap() - 1.0).abs() < 1e-12);
        assert!(tape.value(orth).item().unwrap().abs() < 1e-12);
        assert!((tape.value(opp).item().unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_cosine_is_finite() {
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::zeros(&[3]));
        let v = tape.constant(Tensor::ones(&[3]));
        let c = tape.cosine_similarity(u, v).unwrap();
        assert_eq!(tape.value(c).item().unwrap(), 0.0);
    }

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = permute_data(&x, &[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[i, j, k] = x[j, k, i]
        assert_eq!(p.data()[1 * 6 + 1 * 3 + 2], x.data()[12 + 2 * 4 + 1]);
        let back = permute_data(&p, &[1, 2, 0]);
        assert_eq!(back, x);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[4]));
        assert_eq!(tape.dropout(x, 0.0, 9).unwrap(), x);
    }

    #[test]
    fn conv_len_formula() {
        assert_eq!(conv_out_len(1067, 10, 5), 212);
        assert_eq!(conv_out_len(212, 8, 4), 52);
        assert_eq!(conv_out_len(5, 10, 5), 0);
    }
}

//! Reverse-mode tape over [`Tensor`] values.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs to run backward. `backward` walks the nodes in exact reverse order
//! of recording, summing contributions into each input's gradient.

use std::hash::{DefaultHasher, Hash, Hasher};

use super::kernels::{gemm, gemm_strided, MatMut, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm statistics mode.
#[derive(Clone, Copy, Debug)]
pub enum NormMode<'a> {
    /// Normalize with the statistics of the current input.
    Train,
    /// Normalize with frozen running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch statistics produced by a train-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running-statistics updates.
    pub var_unbiased: Vec<f64>,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    MulScalar(Var, f64),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_b: bool,
    },
    Transpose(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    IndexSelect {
        x: Var,
        axis: usize,
        index: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    TemporalConv {
        x: Var,
        w: Var,
        b: Option<Var>,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    AvgPool {
        x: Var,
        axis: usize,
        window: usize,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Relu {
        x: Var,
        mask: Vec<bool>,
    },
    BatchHard {
        emb: Var,
        /// (anchor, hardest positive, hardest negative) for every active anchor.
        active: Vec<(usize, usize, usize)>,
        count: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded unit of differentiable work.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    frozen: Option<Frozen>,
}

/// Every branch decision recorded on a tape, in recording order: the
/// pass-through mask of each ReLU and the `(anchor, positive, negative)`
/// triplets of each batch-hard loss.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Branches {
    pub relu: Vec<Vec<bool>>,
    pub batch_hard: Vec<Vec<(usize, usize, usize)>>,
}

struct Frozen {
    branches: Branches,
    relu_next: usize,
    hard_next: usize,
}

/// Gradients of a scalar with respect to the tape's leaves.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn last_dim(t: &Tensor) -> Result<usize> {
    t.shape()
        .last()
        .copied()
        .ok_or_else(|| Error::shape("expected a tensor of rank >= 1"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that replays `branches` instead of deciding them from values,
    /// which evaluates the smooth piece of a piecewise-smooth function.
    pub fn with_branches(branches: Branches) -> Self {
        Tape {
            nodes: Vec::new(),
            frozen: Some(Frozen {
                branches,
                relu_next: 0,
                hard_next: 0,
            }),
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let mut out = ta.clone();
        out.add_assign(tb.data());
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// `x + v` with `v` (shape `[C]`) broadcast over every leading index of `x`.
    pub fn add_broadcast(&mut self, x: Var, v: Var) -> Result<Var> {
        let (tx, tv) = (self.value(x), self.value(v));
        let c = last_dim(tx)?;
        if tv.shape() != [c] {
            return Err(Error::shape(format!(
                "add_broadcast: {:?} + {:?}",
                tx.shape(),
                tv.shape()
            )));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (o, b) in row.iter_mut().zip(tv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBroadcast(x, v), &[x, v]))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::MulScalar(a, s), &[a])
    }

    /// Matrix product over the last two dims. `a` is `[M,K]` or `[B,M,K]`;
    /// `b` is `[K,N]` (shared across the batch) or `[B,K,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let err = || Error::shape(format!("matmul: {:?} x {:?}", ta.shape(), tb.shape()));
        let (batch, m, k) = match *ta.shape() {
            [m, k] => (1, m, k),
            [bt, m, k] => (bt, m, k),
            _ => return Err(err()),
        };
        let (shared_b, kb, n) = match *tb.shape() {
            [kb, n] => (true, kb, n),
            [bt, kb, n] if bt == batch && ta.rank() == 3 => (false, kb, n),
            _ => return Err(err()),
        };
        if kb != k {
            return Err(err());
        }
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let boff = if shared_b { 0 } else { bi * k * n };
            gemm(
                m,
                k,
                n,
                1.0,
                &ta.data()[bi * m * k..],
                false,
                &tb.data()[boff..],
                false,
                0.0,
                &mut out[bi * m * n..],
            );
        }
        let shape: Vec<usize> = if ta.rank() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(
            out,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
            },
            &[a, b],
        ))
    }

    /// Swaps the last two dims.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() < 2 {
            return Err(Error::shape("transpose needs rank >= 2"));
        }
        let out = transpose_last2(t);
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*inputs.first().ok_or_else(|| Error::shape("concat of nothing"))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape(format!("concat axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape(format!("concat: {first:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Gathers slices along `axis`: `out[.., i, ..] = x[.., index[i], ..]`.
    pub fn index_select(&mut self, x: Var, axis: usize, index: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::shape(format!("index_select axis {axis} for {:?}", t.shape())));
        }
        let (outer, len, inner) = t.split_at_axis(axis);
        if let Some(&bad) = index.iter().find(|&&i| i >= len) {
            return Err(Error::shape(format!("index {bad} out of range {len}")));
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = index.len();
        let mut data = Vec::with_capacity(outer * index.len() * inner);
        for o in 0..outer {
            for &i in index {
                let start = (o * len + i) * inner;
                data.extend_from_slice(&t.data()[start..start + inner]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(
            out,
            Op::IndexSelect {
                x,
                axis,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// `x @ w + b` over the last dim of `x`; `w` is `[C_in, C_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let cin = last_dim(tx)?;
        let [wi, cout] = *tw.shape() else {
            return Err(Error::shape(format!("linear weight {:?}", tw.shape())));
        };
        if wi != cin {
            return Err(Error::shape(format!(
                "linear: input {:?} with weight {:?}",
                tx.shape(),
                tw.shape()
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::shape(format!("linear bias {:?}", self.value(b).shape())));
            }
        }
        let rows = tx.numel() / cin.max(1);
        let mut out = vec![0.0; rows * cout];
        if let Some(b) = b {
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(self.value(b).data());
            }
        }
        gemm(rows, cin, cout, 1.0, tx.data(), false, tw.data(), false, 1.0, &mut out);
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let out = Tensor::new(&shape, out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Linear { x, w, b }, &inputs))
    }

    /// Softmax along `axis`, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::shape(format!("softmax axis {axis} for {:?}", t.shape())));
        }
        let (outer, len, inner) = t.split_at_axis(axis);
        let mut out = t.clone();
        let d = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| d[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (d[idx(j)] - max).exp();
                    d[idx(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    d[idx(j)] /= sum;
                }
            }
        }
        Ok(self.push(out, Op::Softmax { x, axis }, &[x]))
    }

    /// Scaled dot-product attention over the token axis of `[N, J, C]` inputs,
    /// independently for each of the `N` leading slices and each head.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        same_shape("attention q/k", tq, tk)?;
        same_shape("attention q/v", tq, tv)?;
        let [n, j, c] = *tq.shape() else {
            return Err(Error::shape(format!("attention expects [N,J,C], got {:?}", tq.shape())));
        };
        if heads == 0 || c % heads != 0 {
            return Err(Error::shape(format!("{c} channels not divisible by {heads} heads")));
        }
        let d = c / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut probs = vec![0.0; n * heads * j * j];
        let mut out = vec![0.0; n * j * c];
        for ni in 0..n {
            let base = ni * j * c;
            for h in 0..heads {
                let off = base + h * d;
                let p = &mut probs[(ni * heads + h) * j * j..][..j * j];
                gemm_strided(
                    j,
                    d,
                    j,
                    scale,
                    MatRef::new(&tq.data()[off..], c, 1),
                    MatRef::new(&tk.data()[off..], 1, c),
                    0.0,
                    MatMut::new(p, j, 1),
                );
                for row in p.chunks_exact_mut(j) {
                    softmax_row(row);
                }
                gemm_strided(
                    j,
                    j,
                    d,
                    1.0,
                    MatRef::new(p, j, 1),
                    MatRef::new(&tv.data()[off..], c, 1),
                    0.0,
                    MatMut::new(&mut out[off..], c, 1),
                );
            }
        }
        let out = Tensor::new(&[n, j, c], out)?;
        Ok(self.push(out, Op::Attention { q, k, v, heads, probs }, &[q, k, v]))
    }

    /// 1-D convolution over axis 1 of `[B, T, J, C_in]`, independent per point,
    /// with full channel mixing and zero padding. `w` is `[K, C_in, C_out]`.
    pub fn temporal_conv(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let [bsz, t, j, cin] = *tx.shape() else {
            return Err(Error::shape(format!(
                "temporal_conv expects [B,T,J,C], got {:?}",
                tx.shape()
            )));
        };
        let [kk, wi, cout] = *tw.shape() else {
            return Err(Error::shape(format!("temporal_conv weight {:?}", tw.shape())));
        };
        if wi != cin || kk != 2 * pad + 1 {
            return Err(Error::shape(format!(
                "temporal_conv: input {:?}, weight {:?}, pad {pad}",
                tx.shape(),
                tw.shape()
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::shape("temporal_conv bias"));
            }
        }
        let mut out = vec![0.0; bsz * t * j * cout];
        if let Some(b) = b {
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(self.value(b).data());
            }
        }
        for bi in 0..bsz {
            for tau in 0..kk {
                let Some((t0, t1)) = conv_range(t, tau, pad) else {
                    continue;
                };
                let src_t0 = t0 + tau - pad;
                let rows = (t1 - t0) * j;
                gemm(
                    rows,
                    cin,
                    cout,
                    1.0,
                    &tx.data()[((bi * t + src_t0) * j) * cin..],
                    false,
                    &tw.data()[tau * cin * cout..],
                    false,
                    1.0,
                    &mut out[((bi * t + t0) * j) * cout..],
                );
            }
        }
        let out = Tensor::new(&[bsz, t, j, cout], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::TemporalConv { x, w, b, pad }, &inputs))
    }

    /// Per-channel normalization over all leading dims, followed by a learned
    /// scale and shift. Returns the batch statistics in train mode.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let tx = self.value(x);
        let c = last_dim(tx)?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::shape("batch_norm scale/shift"));
        }
        let rows = tx.numel() / c.max(1);
        if rows == 0 {
            return Err(Error::shape("batch_norm over an empty tensor"));
        }
        let (mean, var, stats) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0; c];
                for row in tx.data().chunks_exact(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; c];
                for row in tx.data().chunks_exact(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let unbiased = var.iter().map(|s| s / (rows.saturating_sub(1).max(1)) as f64).collect();
                var.iter_mut().for_each(|s| *s /= rows as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var_unbiased: unbiased,
                };
                (mean, var, Some(stats))
            }
            NormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm running statistics"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = tx.data().to_vec();
        let mut out = vec![0.0; xhat.len()];
        for (xr, yr) in xhat.chunks_exact_mut(c).zip(out.chunks_exact_mut(c)) {
            for ch in 0..c {
                xr[ch] = (xr[ch] - mean[ch]) * inv_std[ch];
                yr[ch] = xr[ch] * g[ch] + bt[ch];
            }
        }
        let out = Tensor::new(tx.shape(), out)?;
        let train = stats.is_some();
        let var_out = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        );
        Ok((var_out, stats))
    }

    /// Non-overlapping mean over contiguous windows along `axis`.
    pub fn avg_pool(&mut self, x: Var, axis: usize, window: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::shape(format!("avg_pool axis {axis} for {:?}", t.shape())));
        }
        let (outer, len, inner) = t.split_at_axis(axis);
        if window == 0 || len % window != 0 {
            return Err(Error::shape(format!(
                "axis length {len} not divisible by window {window}"
            )));
        }
        let groups = len / window;
        let mut data = vec![0.0; outer * groups * inner];
        for o in 0..outer {
            for i in 0..len {
                let src = &t.data()[(o * len + i) * inner..][..inner];
                let dst = &mut data[(o * groups + i / window) * inner..][..inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let inv = 1.0 / window as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        let mut shape = t.shape().to_vec();
        shape[axis] = groups;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::AvgPool { x, axis, window }, &[x]))
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::shape(format!("mean axis {axis} for {:?}", t.shape())));
        }
        let (outer, len, inner) = t.split_at_axis(axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let src = &t.data()[(o * len + i) * inner..][..inner];
                for (d, s) in data[o * inner..][..inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let inv = 1.0 / len as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Mean { x, axis }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let mask: Vec<bool> = match &mut self.frozen {
            None => v.data().iter().map(|&e| e > 0.0).collect(),
            Some(f) => {
                let mask = f
                    .branches
                    .relu
                    .get(f.relu_next)
                    .filter(|m| m.len() == v.numel())
                    .ok_or_else(|| {
                        Error::shape(format!("no frozen ReLU mask #{} of size {}", f.relu_next, v.numel()))
                    })?;
                f.relu_next += 1;
                mask.clone()
            }
        };
        let data = v
            .data()
            .iter()
            .zip(&mask)
            .map(|(&e, &m)| if m { e } else { 0.0 })
            .collect();
        let out = Tensor::new(v.shape(), data)?;
        Ok(self.push(out, Op::Relu { x, mask }, &[x]))
    }

    /// Batch-hard triplet loss over the rows of `emb` (`[N, D]`): for every
    /// anchor, the farthest same-label row and the nearest other-label row,
    /// hinged at `margin` and averaged over anchors.
    pub fn batch_hard_triplet(&mut self, emb: Var, labels: &[usize], margin: f64) -> Result<Var> {
        let t = &self.nodes[emb.0].value;
        let [n, dim] = *t.shape() else {
            return Err(Error::shape(format!("batch_hard expects [N,D], got {:?}", t.shape())));
        };
        if labels.len() != n {
            return Err(Error::LengthMismatch(labels.len(), n));
        }
        let rows: Vec<&[f64]> = t.data().chunks_exact(dim).collect();
        let mining = crate::training::mine_batch_hard(&rows, labels, margin)?;
        let (active, loss): (Vec<(usize, usize, usize)>, f64) = match &mut self.frozen {
            None => (
                mining
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| m.loss > 0.0)
                    .map(|(a, m)| (a, m.positive, m.negative))
                    .collect(),
                mining.iter().map(|m| m.loss).sum::<f64>() / n as f64,
            ),
            Some(f) => {
                let active = f
                    .branches
                    .batch_hard
                    .get(f.hard_next)
                    .filter(|a| a.iter().all(|&(a, p, q)| a < n && p < n && q < n))
                    .cloned()
                    .ok_or_else(|| Error::shape(format!("no frozen batch-hard selection #{}", f.hard_next)))?;
                f.hard_next += 1;
                let d = |i: usize, j: usize| crate::training::euclidean(rows[i], rows[j]);
                let total: f64 = active.iter().map(|&(a, p, q)| d(a, p) - d(a, q) + margin).sum();
                (active, total / n as f64)
            }
        };
        Ok(self.push(Tensor::scalar(loss), Op::BatchHard { emb, active, count: n }, &[emb]))
    }

    /// Branch decisions recorded so far, for replay with [`Tape::with_branches`].
    pub fn branches(&self) -> Branches {
        let mut b = Branches::default();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { mask, .. } => b.relu.push(mask.clone()),
                Op::BatchHard { active, .. } => b.batch_hard.push(active.clone()),
                _ => {}
            }
        }
        b
    }

    /// Hash of [`Tape::branches`]. Equal signatures at two inputs mean the
    /// same piecewise-smooth piece was evaluated.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.branches().hash(&mut h);
        h.finish()
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires them. Only leaf gradients are retained in the result.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contribution: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(contribution),
            slot @ None => {
                let shape = self.nodes[v.0].value.shape();
                *slot = Some(Tensor::new(shape, contribution.to_vec()).expect("gradient shape"));
            }
        }
    }

    /// Like `accumulate`, but takes ownership so a first contribution is
    /// stored without copying.
    fn accumulate_vec(&self, grads: &mut [Option<Tensor>], v: Var, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&contribution),
            slot @ None => {
                let shape = self.nodes[v.0].value.shape();
                *slot = Some(Tensor::new(shape, contribution).expect("gradient shape"));
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd);
                self.accumulate_vec(grads, *b, g.into_data());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd);
                if self.wants(*b) {
                    let neg: Vec<f64> = gd.iter().map(|v| -v).collect();
                    self.accumulate_vec(grads, *b, neg);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let ga: Vec<f64> = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                    self.accumulate_vec(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb: Vec<f64> = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                    self.accumulate_vec(grads, *b, gb);
                }
            }
            Op::AddBroadcast(x, v) => {
                self.accumulate(grads, *x, gd);
                if self.wants(*v) {
                    let c = self.value(*v).numel();
                    let mut gv = vec![0.0; c];
                    for row in gd.chunks_exact(c) {
                        for (s, r) in gv.iter_mut().zip(row) {
                            *s += r;
                        }
                    }
                    self.accumulate_vec(grads, *v, gv);
                }
            }
            Op::MulScalar(a, s) => {
                let ga: Vec<f64> = gd.iter().map(|v| v * s).collect();
                self.accumulate_vec(grads, *a, ga);
            }
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
            } => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if self.wants(a) {
                    let mut ga = vec![0.0; batch * m * k];
                    for bi in 0..batch {
                        let boff = if shared_b { 0 } else { bi * k * n };
                        gemm(
                            m,
                            n,
                            k,
                            1.0,
                            &gd[bi * m * n..],
                            false,
                            &vb[boff..],
                            true,
                            0.0,
                            &mut ga[bi * m * k..],
                        );
                    }
                    self.accumulate_vec(grads, a, ga);
                }
                if self.wants(b) {
                    let mut gb = vec![0.0; if shared_b { k * n } else { batch * k * n }];
                    for bi in 0..batch {
                        let (boff, beta) = if shared_b {
                            (0, if bi == 0 { 0.0 } else { 1.0 })
                        } else {
                            (bi * k * n, 0.0)
                        };
                        gemm(
                            k,
                            m,
                            n,
                            1.0,
                            &va[bi * m * k..],
                            true,
                            &gd[bi * m * n..],
                            false,
                            beta,
                            &mut gb[boff..],
                        );
                    }
                    self.accumulate_vec(grads, b, gb);
                }
            }
            Op::Transpose(a) => {
                let ga = transpose_last2(&g);
                self.accumulate_vec(grads, *a, ga.into_data());
            }
            Op::Reshape(a) => self.accumulate_vec(grads, *a, g.into_data()),
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let len = self.value(v).shape()[*axis] * inner;
                    if self.wants(v) {
                        let mut gv = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            gv.extend_from_slice(&gd[o * total + offset..][..len]);
                        }
                        self.accumulate_vec(grads, v, gv);
                    }
                    offset += len;
                }
            }
            Op::IndexSelect { x, axis, index } => {
                let (outer, len, inner) = self.value(*x).split_at_axis(*axis);
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for (pos, &i) in index.iter().enumerate() {
                        let src = &gd[(o * index.len() + pos) * inner..][..inner];
                        let dst = &mut gx[(o * len + i) * inner..][..inner];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                self.accumulate_vec(grads, *x, gx);
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let [cin, cout] = *vw.shape() else { unreachable!() };
                let rows = vx.numel() / cin.max(1);
                if self.wants(*x) {
                    let mut gx = vec![0.0; rows * cin];
                    gemm(rows, cout, cin, 1.0, gd, false, vw.data(), true, 0.0, &mut gx);
                    self.accumulate_vec(grads, *x, gx);
                }
                if self.wants(*w) {
                    let mut gw = vec![0.0; cin * cout];
                    gemm(cin, rows, cout, 1.0, vx.data(), true, gd, false, 0.0, &mut gw);
                    self.accumulate_vec(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = vec![0.0; cout];
                        for row in gd.chunks_exact(cout) {
                            for (s, r) in gb.iter_mut().zip(row) {
                                *s += r;
                            }
                        }
                        self.accumulate_vec(grads, *b, gb);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = node.value.split_at_axis(*axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            gx[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                self.accumulate_vec(grads, *x, gx);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (vq, vk, vv) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let [n, j, c] = *self.value(*q).shape() else {
                    unreachable!()
                };
                let d = c / heads;
                let scale = 1.0 / (d as f64).sqrt();
                let mut gq = vec![0.0; n * j * c];
                let mut gk = vec![0.0; n * j * c];
                let mut gv = vec![0.0; n * j * c];
                let mut dp = vec![0.0; j * j];
                for ni in 0..n {
                    for h in 0..*heads {
                        let off = ni * j * c + h * d;
                        let p = &probs[(ni * heads + h) * j * j..][..j * j];
                        // dV = P^T dO
                        gemm_strided(
                            j,
                            j,
                            d,
                            1.0,
                            MatRef::new(p, 1, j),
                            MatRef::new(&gd[off..], c, 1),
                            0.0,
                            MatMut::new(&mut gv[off..], c, 1),
                        );
                        // dP = dO V^T
                        gemm_strided(
                            j,
                            d,
                            j,
                            1.0,
                            MatRef::new(&gd[off..], c, 1),
                            MatRef::new(&vv[off..], 1, c),
                            0.0,
                            MatMut::new(&mut dp, j, 1),
                        );
                        // dS = P * (dP - rowsum(dP * P))
                        for (prow, drow) in p.chunks_exact(j).zip(dp.chunks_exact_mut(j)) {
                            let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                            for (dv, pv) in drow.iter_mut().zip(prow) {
                                *dv = pv * (*dv - dot);
                            }
                        }
                        // dQ = dS K * scale, dK = dS^T Q * scale
                        gemm_strided(
                            j,
                            j,
                            d,
                            scale,
                            MatRef::new(&dp, j, 1),
                            MatRef::new(&vk[off..], c, 1),
                            0.0,
                            MatMut::new(&mut gq[off..], c, 1),
                        );
                        gemm_strided(
                            j,
                            j,
                            d,
                            scale,
                            MatRef::new(&dp, 1, j),
                            MatRef::new(&vq[off..], c, 1),
                            0.0,
                            MatMut::new(&mut gk[off..], c, 1),
                        );
                    }
                }
                self.accumulate_vec(grads, *q, gq);
                self.accumulate_vec(grads, *k, gk);
                self.accumulate_vec(grads, *v, gv);
            }
            Op::TemporalConv { x, w, b, pad } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let [bsz, t, j, cin] = *vx.shape() else { unreachable!() };
                let [kk, _, cout] = *vw.shape() else { unreachable!() };
                let want_x = self.wants(*x);
                let want_w = self.wants(*w);
                let mut gx = if want_x { vec![0.0; vx.numel()] } else { Vec::new() };
                let mut gw = if want_w { vec![0.0; vw.numel()] } else { Vec::new() };
                for bi in 0..bsz {
                    for tau in 0..kk {
                        let Some((t0, t1)) = conv_range(t, tau, *pad) else {
                            continue;
                        };
                        let src_t0 = t0 + tau - pad;
                        let rows = (t1 - t0) * j;
                        let gslab = &gd[((bi * t + t0) * j) * cout..];
                        if want_x {
                            gemm(
                                rows,
                                cout,
                                cin,
                                1.0,
                                gslab,
                                false,
                                &vw.data()[tau * cin * cout..],
                                true,
                                1.0,
                                &mut gx[((bi * t + src_t0) * j) * cin..],
                            );
                        }
                        if want_w {
                            gemm(
                                cin,
                                rows,
                                cout,
                                1.0,
                                &vx.data()[((bi * t + src_t0) * j) * cin..],
                                true,
                                gslab,
                                false,
                                1.0,
                                &mut gw[tau * cin * cout..],
                            );
                        }
                    }
                }
                if want_x {
                    self.accumulate_vec(grads, *x, gx);
                }
                if want_w {
                    self.accumulate_vec(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = vec![0.0; cout];
                        for row in gd.chunks_exact(cout) {
                            for (s, r) in gb.iter_mut().zip(row) {
                                *s += r;
                            }
                        }
                        self.accumulate_vec(grads, *b, gb);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (gr, xr) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        sum_g[ch] += gr[ch];
                        sum_gx[ch] += gr[ch] * xr[ch];
                    }
                }
                if self.wants(*x) {
                    let mut gx = vec![0.0; xhat.len()];
                    let nf = rows as f64;
                    for ((gxr, gr), xr) in gx.chunks_exact_mut(c).zip(gd.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
                        for ch in 0..c {
                            let s = gam[ch] * inv_std[ch];
                            gxr[ch] = if *train {
                                s * (gr[ch] - sum_g[ch] / nf - xr[ch] * sum_gx[ch] / nf)
                            } else {
                                s * gr[ch]
                            };
                        }
                    }
                    self.accumulate_vec(grads, *x, gx);
                }
                self.accumulate_vec(grads, *gamma, sum_gx);
                self.accumulate_vec(grads, *beta, sum_g);
            }
            Op::AvgPool { x, axis, window } => {
                let (outer, len, inner) = self.value(*x).split_at_axis(*axis);
                let groups = len / window;
                let inv = 1.0 / *window as f64;
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..len {
                        let src = &gd[(o * groups + i / window) * inner..][..inner];
                        for (d, s) in gx[(o * len + i) * inner..][..inner].iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                }
                self.accumulate_vec(grads, *x, gx);
            }
            Op::Mean { x, axis } => {
                let (outer, len, inner) = self.value(*x).split_at_axis(*axis);
                let inv = 1.0 / len as f64;
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for i in 0..len {
                        let src = &gd[o * inner..][..inner];
                        for (d, s) in gx[(o * len + i) * inner..][..inner].iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                }
                self.accumulate_vec(grads, *x, gx);
            }
            Op::Sum(x) => {
                let gx = vec![gd[0]; self.value(*x).numel()];
                self.accumulate_vec(grads, *x, gx);
            }
            Op::Relu { x, mask } => {
                let gx: Vec<f64> = gd.iter().zip(mask).map(|(g, &m)| if m { *g } else { 0.0 }).collect();
                self.accumulate_vec(grads, *x, gx);
            }
            Op::BatchHard { emb, active, count } => {
                let t = self.value(*emb);
                let dim = t.shape()[1];
                let e = t.data();
                let scale = gd[0] / *count as f64;
                let mut ge = vec![0.0; e.len()];
                let mut pull = |from: usize, to: usize, sign: f64| {
                    let (a, b) = (&e[from * dim..][..dim], &e[to * dim..][..dim]);
                    let dist = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    if dist == 0.0 {
                        return;
                    }
                    for i in 0..dim {
                        let u = sign * scale * (a[i] - b[i]) / dist;
                        ge[from * dim + i] += u;
                        ge[to * dim + i] -= u;
                    }
                };
                for &(a, p, n) in active {
                    pull(a, p, 1.0);
                    pull(a, n, -1.0);
                }
                self.accumulate_vec(grads, *emb, ge);
            }
        }
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Output frame range `[t0, t1)` whose input frame `t + tau - pad` is in bounds.
fn conv_range(t: usize, tau: usize, pad: usize) -> Option<(usize, usize)> {
    let t0 = pad.saturating_sub(tau);
    let t1 = (t + pad).saturating_sub(tau).min(t);
    (t0 < t1).then_some((t0, t1))
}

fn transpose_last2(t: &Tensor) -> Tensor {
    let r = t.rank();
    let (rows, cols) = (t.shape()[r - 2], t.shape()[r - 1]);
    let batch = t.numel() / (rows * cols).max(1);
    let mut data = vec![0.0; t.numel()];
    for b in 0..batch {
        let src = &t.data()[b * rows * cols..];
        let dst = &mut data[b * rows * cols..];
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::new(&shape, data).expect("transpose shape")
}

//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Every operation appends a node whose inputs precede it, so walking the node
//! list backwards is a valid topological order for the backward pass.

use crate::error::{arg_err, shape_err, Result};
use crate::kernels::{self, broadcast_strides, split_axis, walk2, ConvGeom};
use crate::linalg::gemm;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{strides, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Pool {
        x: Var,
        kind: PoolKind,
        window: usize,
        stride: usize,
        pad_left: usize,
        /// Flat input index per output element (max) or empty (avg).
        argmax: Vec<usize>,
    },
    Reduce {
        x: Var,
        axis: usize,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        layout: NormLayout,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Bmm {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
    Rmse {
        pred: Var,
        targets: Vec<f64>,
    },
    SumAll {
        x: Var,
    },
}

/// Which elements share normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NormLayout {
    /// `[B, C, L]`, statistics per channel over batch and length.
    Batch,
    /// `[.., D]`, statistics per row over the last axis.
    Layer,
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    params: Vec<(ParamId, Vec<f64>)>,
    leaves: Vec<(Var, Vec<f64>)>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn leaf(&self, v: Var) -> Option<&[f64]> {
        self.leaves
            .iter()
            .find(|(l, _)| *l == v)
            .map(|(_, g)| g.as_slice())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(p, g)| (*p, g.as_slice()))
    }
}

impl ParamStore {
    /// Adds gradients produced by a backward pass into each parameter's `grad`.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            let p = self.get_mut(id);
            for (a, b) in p.grad.data_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<(ParamId, Var)>,
    mode: Mode,
    track: bool,
    buffer_updates: Vec<(ParamId, Vec<f64>)>,
    macs: u64,
}

impl<'s> Graph<'s> {
    /// A recording graph. Parameters with `requires_grad` receive gradients.
    pub fn new(store: &'s ParamStore, mode: Mode) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: Vec::new(),
            mode,
            track: true,
            buffer_updates: Vec::new(),
            macs: 0,
        }
    }

    /// Eval-mode graph that never needs a backward pass.
    pub fn inference(store: &'s ParamStore) -> Self {
        let mut g = Self::new(store, Mode::Eval);
        g.track = false;
        g
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Multiply-accumulate operations executed by forward ops so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Running-statistic updates gathered from batchnorm layers in train mode.
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Vec<f64>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = self.track && inputs.iter().any(|&i| self.needs(i));
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf referencing a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_nodes.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let needs_grad = self.track && self.store.get(id).requires_grad;
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.push((id, v));
        v
    }

    // ------------------------------------------------------------------ ops

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        if stride == 0 {
            return Err(arg_err("conv1d", "stride must be positive"));
        }
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 3 || ws.len() != 3 {
            return Err(shape_err("conv1d", format!("input {xs:?} and kernel {ws:?} must be rank 3")));
        }
        let (batch, cin, len_in) = (xs[0], xs[1], xs[2]);
        let (cout, kcin, kernel) = (ws[0], ws[1], ws[2]);
        if kcin != cin {
            return Err(shape_err(
                "conv1d",
                format!("input has {cin} channels but kernel {ws:?} expects {kcin}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(shape_err("conv1d", format!("bias {:?} for {cout} filters", self.shape(b))));
            }
        }
        let (len_out, pad_left) = kernels::window_geometry(len_in, kernel, stride, padding == Padding::Same)
            .ok_or_else(|| shape_err("conv1d", format!("kernel {kernel} longer than input {len_in}")))?;
        let geom = ConvGeom {
            batch,
            cin,
            cout,
            len_in,
            len_out,
            kernel,
            stride,
            pad_left,
        };
        let mut out = vec![0.0; batch * cout * len_out];
        kernels::conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        self.macs += (batch * cout * len_out * cin * kernel) as u64;
        let t = Tensor::new(&[batch, cout, len_out], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Conv1d { x, w, b, geom }, &inputs))
    }

    pub fn pool1d(&mut self, x: Var, kind: PoolKind, window: usize, stride: usize, padding: Padding) -> Result<Var> {
        if window == 0 || stride == 0 {
            return Err(arg_err("pool1d", "window and stride must be positive"));
        }
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(shape_err("pool1d", format!("expected [B, C, L], got {xs:?}")));
        }
        let (rows, len) = (xs[0] * xs[1], xs[2]);
        let (len_out, pad_left) = kernels::window_geometry(len, window, stride, padding == Padding::Same)
            .ok_or_else(|| arg_err("pool1d", format!("window {window} exceeds length {len}")))?;
        let src = self.value(x).data();
        let mut out = vec![0.0; rows * len_out];
        let mut argmax = if kind == PoolKind::Max { vec![0; rows * len_out] } else { Vec::new() };
        for r in 0..rows {
            let row = &src[r * len..(r + 1) * len];
            for i in 0..len_out {
                let start = (i * stride) as isize - pad_left as isize;
                let lo = start.max(0) as usize;
                let hi = ((start + window as isize) as usize).min(len);
                let o = r * len_out + i;
                match kind {
                    PoolKind::Max => {
                        let mut best = lo;
                        for j in lo + 1..hi {
                            if row[j] > row[best] {
                                best = j;
                            }
                        }
                        out[o] = row[best];
                        argmax[o] = r * len + best;
                    }
                    PoolKind::Avg => {
                        out[o] = row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
                    }
                }
            }
        }
        let t = Tensor::new(&[xs[0], xs[1], len_out], out)?;
        Ok(self.push(
            t,
            Op::Pool {
                x,
                kind,
                window,
                stride,
                pad_left,
                argmax,
            },
            &[x],
        ))
    }

    /// Reduces (and removes) `axis` by mean or max. Max ties resolve to the first index.
    pub fn reduce(&mut self, x: Var, axis: usize, kind: PoolKind) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || xs.len() < 2 {
            return Err(shape_err("reduce", format!("axis {axis} invalid for {xs:?}")));
        }
        let (outer, n, inner) = split_axis(&xs, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = if kind == PoolKind::Max { vec![0; outer * inner] } else { Vec::new() };
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let k = o * inner + i;
                match kind {
                    PoolKind::Avg => {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += src[base + j * inner];
                        }
                        out[k] = s / n as f64;
                    }
                    PoolKind::Max => {
                        let mut best = base;
                        for j in 1..n {
                            if src[base + j * inner] > src[best] {
                                best = base + j * inner;
                            }
                        }
                        out[k] = src[best];
                        argmax[k] = best;
                    }
                }
            }
        }
        let mut shape = xs.clone();
        shape.remove(axis);
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Reduce { x, axis, kind, argmax }, &[x]))
    }

    /// Per-channel reduction over the length axis: `[B, C, L] -> [B, C]`.
    pub fn global_pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        if self.shape(x).len() != 3 {
            return Err(shape_err("global_pool", format!("expected [B, C, L], got {:?}", self.shape(x))));
        }
        self.reduce(x, 2, kind)
    }

    /// `[B, N] x [N, M] + [M]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(shape_err("dense", format!("input {xs:?} incompatible with weight {ws:?}")));
        }
        let (bsz, n, m) = (xs[0], xs[1], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(shape_err("dense", format!("bias {:?} for {m} outputs", self.shape(b))));
            }
        }
        let mut out = vec![0.0; bsz * m];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bias);
            }
        }
        gemm(bsz, n, m, self.value(x).data(), false, self.value(w).data(), false, 1.0, &mut out);
        self.macs += (bsz * n * m) as u64;
        let t = Tensor::new(&[bsz, m], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Dense { x, w, b }, &inputs))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .map(|&v| match kind {
                Activation::Relu => v.max(0.0),
                Activation::Sigmoid => sigmoid(v),
                Activation::Tanh => v.tanh(),
            })
            .collect();
        let t = Tensor::new(src.shape(), data).expect("same shape");
        self.push(t, Op::Act { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(shape_err("softmax", format!("axis {axis} invalid for {xs:?}")));
        }
        let (outer, n, inner) = split_axis(&xs, axis);
        let mut out = self.value(x).data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    mx = mx.max(out[base + j * inner]);
                }
                let mut s = 0.0;
                for j in 0..n {
                    let e = (out[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    s += e;
                }
                for j in 0..n {
                    out[base + j * inner] /= s;
                }
            }
        }
        let t = Tensor::new(&xs, out)?;
        Ok(self.push(t, Op::Softmax { x, axis }, &[x]))
    }

    /// Batch normalization over `[B, C, L]`. Train mode normalizes with batch
    /// statistics and queues running-stat updates; eval mode uses the running stats.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(shape_err("batchnorm1d", format!("expected [B, C, L], got {xs:?}")));
        }
        let (bsz, c, l) = (xs[0], xs[1], xs[2]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("batchnorm1d", format!("gamma/beta must have {c} entries")));
        }
        let n = bsz * l;
        let train = self.mode == Mode::Train;
        if train && n < 2 {
            return Err(arg_err("batchnorm1d", format!("train mode needs B*L >= 2, got {n}")));
        }
        let src = self.value(x).data();
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..bsz {
                    s += src[(b * c + ch) * l..(b * c + ch + 1) * l].iter().sum::<f64>();
                }
                let m = s / n as f64;
                let mut v = 0.0;
                for b in 0..bsz {
                    v += src[(b * c + ch) * l..(b * c + ch + 1) * l]
                        .iter()
                        .map(|x| (x - m) * (x - m))
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = v / n as f64;
            }
            (mean, var)
        } else {
            (
                self.store.value(running_mean).data().to_vec(),
                self.store.value(running_var).data().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for b in 0..bsz {
            for ch in 0..c {
                let off = (b * c + ch) * l;
                for i in off..off + l {
                    let h = (src[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        if train {
            let blend = |old: &[f64], new: &[f64]| -> Vec<f64> {
                old.iter()
                    .zip(new)
                    .map(|(o, n)| BN_MOMENTUM * o + (1.0 - BN_MOMENTUM) * n)
                    .collect()
            };
            let rm = blend(self.store.value(running_mean).data(), &mean);
            let rv = blend(self.store.value(running_var).data(), &var);
            self.buffer_updates.push((running_mean, rm));
            self.buffer_updates.push((running_var, rv));
        }
        let t = Tensor::new(&xs, out)?;
        Ok(self.push(
            t,
            Op::Norm {
                x,
                gamma,
                beta,
                layout: NormLayout::Batch,
                xhat,
                inv_std,
                batch_stats: train,
            },
            &[x, gamma, beta],
        ))
    }

    /// Layer normalization over the last axis.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| shape_err("layernorm", "empty shape"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layernorm", format!("gamma/beta must have {d} entries")));
        }
        let src = self.value(x).data();
        let rows = src.len() / d;
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let m = row.iter().sum::<f64>() / d as f64;
            let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d as f64;
            let is = 1.0 / (v + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - m) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        let t = Tensor::new(&xs, out)?;
        Ok(self.push(
            t,
            Op::Norm {
                x,
                gamma,
                beta,
                layout: NormLayout::Layer,
                xhat,
                inv_std,
                batch_stats: true,
            },
            &[x, gamma, beta],
        ))
    }

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(shape_err(op, format!("rank mismatch {sa:?} vs {sb:?}")));
        }
        sa.iter()
            .zip(sb)
            .map(|(&x, &y)| match (x, y) {
                _ if x == y => Ok(x),
                (1, _) => Ok(y),
                (_, 1) => Ok(x),
                _ => Err(shape_err(op, format!("cannot broadcast {sa:?} with {sb:?}"))),
            })
            .collect()
    }

    fn binary(&mut self, a: Var, b: Var, mul: bool) -> Result<Var> {
        let op_name = if mul { "mul" } else { "add" };
        let shape = self.broadcast_shape(op_name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let f = |x: f64, y: f64| if mul { x * y } else { x + y };
        let data: Vec<f64> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let (sa, sb) = (broadcast_strides(ta.shape(), &shape), broadcast_strides(tb.shape(), &shape));
            let mut out = vec![0.0; shape.iter().product()];
            let (da, db) = (ta.data(), tb.data());
            walk2(&shape, &sa, &sb, |o, ia, ib| out[o] = f(da[ia], db[ib]));
            out
        };
        let t = Tensor::new(&shape, data)?;
        let op = if mul { Op::Mul { a, b } } else { Op::Add { a, b } };
        Ok(self.push(t, op, &[a, b]))
    }

    /// Elementwise sum with broadcasting over size-1 dimensions of equal-rank operands.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, false)
    }

    /// Elementwise product with broadcasting over size-1 dimensions of equal-rank operands.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, true)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let src = self.value(x);
        let t = Tensor::new(src.shape(), src.data().iter().map(|v| v * c).collect()).expect("same shape");
        self.push(t, Op::Scale { x, c }, &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| arg_err("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} invalid for {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} incompatible with {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Concat { xs: xs.to_vec(), axis }, xs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape { x }, &[x]))
    }

    /// Output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let mut seen = vec![false; xs.len()];
        if perm.len() != xs.len() || perm.iter().any(|&p| p >= xs.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(arg_err("permute", format!("{perm:?} is not a permutation of {} axes", xs.len())));
        }
        let in_strides = strides(&xs);
        let shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
        let sa: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let zeros = vec![0; shape.len()];
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        walk2(&shape, &sa, &zeros, |o, i, _| out[o] = src[i]);
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Permute { x, perm: perm.to_vec() }, &[x]))
    }

    /// Batched matrix product of rank-3 operands, optionally transposing the last two axes of either.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("bmm", format!("{sa:?} x {sb:?}")));
        }
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (kb, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(shape_err("bmm", format!("inner dims {k} vs {kb} for {sa:?} x {sb:?}")));
        }
        let batch = sa[0];
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                ta,
                &db[i * k * n..(i + 1) * k * n],
                tb,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        self.macs += (batch * m * k * n) as u64;
        let t = Tensor::new(&[batch, m, n], out)?;
        Ok(self.push(t, Op::Bmm { a, b, ta, tb }, &[a, b]))
    }

    /// Mean binary cross-entropy of `[B, 1]` logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != targets.len() {
            return Err(shape_err("bce_with_logits", format!("{} logits vs {} targets", z.len(), targets.len())));
        }
        let loss = z
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / z.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Root mean squared error.
    pub fn rmse(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != targets.len() {
            return Err(shape_err("rmse", format!("{} predictions vs {} targets", p.len(), targets.len())));
        }
        let mse = p.iter().zip(targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        Ok(self.push(
            Tensor::scalar(mse.sqrt()),
            Op::Rmse {
                pred,
                targets: targets.to_vec(),
            },
            &[pred],
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x }, &[x])
    }

    // ------------------------------------------------------------- backward

    /// Propagates d(root)/d(·) back to every parameter leaf that requires a gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(arg_err(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape(root)),
            ));
        }
        if !self.track {
            return Err(arg_err("backward", "graph was built for inference"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);
        let mut out = Gradients::default();
        for idx in (0..=root.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match node.value {
                    Value::Param(id) => out.params.push((id, gy)),
                    Value::Owned(_) => out.leaves.push((Var(idx), gy)),
                }
                continue;
            }
            self.backward_node(idx, &gy, &mut grads);
        }
        out.params.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.needs(v) {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = self.value(Var(idx)).data();
        match &self.nodes[idx].op {
            Op::Leaf => unreachable!(),
            Op::Conv1d { x, w, b, geom } => {
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let mut dw = self.acc(grads, *w).map(std::mem::take);
                let mut db = b.and_then(|b| self.acc(grads, b).map(std::mem::take));
                let mut dx = self.acc(grads, *x).map(std::mem::take);
                kernels::conv1d_backward(geom, xd, wd, gy, dw.as_deref_mut(), db.as_deref_mut(), dx.as_deref_mut());
                if let Some(g) = dw {
                    grads[w.0] = Some(g);
                }
                if let (Some(g), Some(b)) = (db, b) {
                    grads[b.0] = Some(g);
                }
                if let Some(g) = dx {
                    grads[x.0] = Some(g);
                }
            }
            Op::Pool {
                x,
                kind,
                window,
                stride,
                pad_left,
                argmax,
            } => {
                let xs = self.shape(*x).to_vec();
                let len = xs[2];
                let len_out = self.shape(Var(idx))[2];
                if let Some(dx) = self.acc(grads, *x) {
                    match kind {
                        PoolKind::Max => {
                            for (o, &src) in argmax.iter().enumerate() {
                                dx[src] += gy[o];
                            }
                        }
                        PoolKind::Avg => {
                            for (o, g) in gy.iter().enumerate() {
                                let (r, i) = (o / len_out, o % len_out);
                                let start = (i * stride) as isize - *pad_left as isize;
                                let lo = start.max(0) as usize;
                                let hi = ((start + *window as isize) as usize).min(len);
                                let share = g / (hi - lo) as f64;
                                for j in lo..hi {
                                    dx[r * len + j] += share;
                                }
                            }
                        }
                    }
                }
            }
            Op::Reduce { x, axis, kind, argmax } => {
                let xs = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&xs, *axis);
                if let Some(dx) = self.acc(grads, *x) {
                    match kind {
                        PoolKind::Max => {
                            for (k, &src) in argmax.iter().enumerate() {
                                dx[src] += gy[k];
                            }
                        }
                        PoolKind::Avg => {
                            for o in 0..outer {
                                for i in 0..inner {
                                    let g = gy[o * inner + i] / n as f64;
                                    for j in 0..n {
                                        dx[o * n * inner + j * inner + i] += g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (bsz, n, m) = (xs[0], xs[1], ws[1]);
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                if let Some(dw) = self.acc(grads, *w) {
                    gemm(n, bsz, m, xd, true, gy, false, 1.0, dw);
                }
                if let Some(b) = b {
                    if let Some(db) = self.acc(grads, *b) {
                        for row in gy.chunks(m) {
                            for (d, g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                    }
                }
                if let Some(dx) = self.acc(grads, *x) {
                    gemm(bsz, m, n, gy, false, wd, true, 1.0, dx);
                }
            }
            Op::Act { x, kind } => {
                let xd = self.value(*x).data();
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..dx.len() {
                        let d = match kind {
                            Activation::Relu => {
                                if xd[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::Sigmoid => y[i] * (1.0 - y[i]),
                            Activation::Tanh => 1.0 - y[i] * y[i],
                        };
                        dx[i] += gy[i] * d;
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                if let Some(dx) = self.acc(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * n * inner + i;
                            let dot: f64 = (0..n).map(|j| gy[base + j * inner] * y[base + j * inner]).sum();
                            for j in 0..n {
                                let p = base + j * inner;
                                dx[p] += y[p] * (gy[p] - dot);
                            }
                        }
                    }
                }
            }
            Op::Norm {
                x,
                gamma,
                beta,
                layout,
                xhat,
                inv_std,
                batch_stats,
            } => self.norm_backward(*x, *gamma, *beta, *layout, xhat, inv_std, *batch_stats, gy, grads),
            Op::Add { a, b } | Op::Mul { a, b } => {
                let mul = matches!(self.nodes[idx].op, Op::Mul { .. });
                let shape = self.shape(Var(idx)).to_vec();
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if !self.needs(this) {
                        continue;
                    }
                    let ts = self.shape(this).to_vec();
                    let od = self.value(other).data();
                    let os = self.shape(other).to_vec();
                    let d = self.acc(grads, this).expect("needs grad");
                    if ts == shape && os == shape {
                        for i in 0..d.len() {
                            d[i] += if mul { gy[i] * od[i] } else { gy[i] };
                        }
                    } else {
                        let st = broadcast_strides(&ts, &shape);
                        let so = broadcast_strides(&os, &shape);
                        walk2(&shape, &st, &so, |o, it, io| {
                            d[it] += if mul { gy[o] * od[io] } else { gy[o] };
                        });
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, g) in dx.iter_mut().zip(gy) {
                        *d += c * g;
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let shape = self.shape(Var(idx)).to_vec();
                let (outer, _, inner) = split_axis(&shape, *axis);
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in xs {
                    let chunk = self.shape(v)[*axis] * inner;
                    if let Some(dx) = self.acc(grads, v) {
                        for o in 0..outer {
                            let src = &gy[o * total + offset..o * total + offset + chunk];
                            for (d, g) in dx[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d += g;
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, g) in dx.iter_mut().zip(gy) {
                        *d += g;
                    }
                }
            }
            Op::Permute { x, perm } => {
                let xs = self.shape(*x).to_vec();
                let in_strides = strides(&xs);
                let shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
                let sa: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                let zeros = vec![0; shape.len()];
                if let Some(dx) = self.acc(grads, *x) {
                    walk2(&shape, &sa, &zeros, |o, i, _| dx[i] += gy[o]);
                }
            }
            Op::Bmm { a, b, ta, tb } => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let (m, k) = if *ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
                let n = if *tb { sb[1] } else { sb[2] };
                let batch = sa[0];
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..batch {
                        let gyi = &gy[i * m * n..(i + 1) * m * n];
                        let bi = &db[i * k * n..(i + 1) * k * n];
                        let gai = &mut ga[i * m * k..(i + 1) * m * k];
                        if *ta {
                            gemm(k, n, m, bi, *tb, gyi, true, 1.0, gai);
                        } else {
                            gemm(m, n, k, gyi, false, bi, !*tb, 1.0, gai);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for i in 0..batch {
                        let gyi = &gy[i * m * n..(i + 1) * m * n];
                        let ai = &da[i * m * k..(i + 1) * m * k];
                        let gbi = &mut gb[i * k * n..(i + 1) * k * n];
                        if *tb {
                            gemm(n, m, k, gyi, true, ai, *ta, 1.0, gbi);
                        } else {
                            gemm(k, m, n, ai, !*ta, gyi, false, 1.0, gbi);
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.value(*logits).data();
                let n = z.len() as f64;
                if let Some(dz) = self.acc(grads, *logits) {
                    for i in 0..dz.len() {
                        dz[i] += gy[0] * (sigmoid(z[i]) - targets[i]) / n;
                    }
                }
            }
            Op::Rmse { pred, targets } => {
                let p = self.value(*pred).data();
                let n = p.len() as f64;
                let r = y[0];
                if let Some(dp) = self.acc(grads, *pred) {
                    if r > 0.0 {
                        for i in 0..dp.len() {
                            dp[i] += gy[0] * (p[i] - targets[i]) / (n * r);
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += gy[0]);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn norm_backward(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        layout: NormLayout,
        xhat: &[f64],
        inv_std: &[f64],
        batch_stats: bool,
        gy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let xs = self.shape(x).to_vec();
        let gv = self.value(gamma).data().to_vec();
        // Rows are contiguous runs sharing one statistic group (batch layout) or
        // one group per row spanning every parameter slot (layer layout).
        let (row_len, groups, group_size) = match layout {
            NormLayout::Batch => (xs[2], xs[1], xs[0] * xs[2]),
            NormLayout::Layer => {
                let d = *xs.last().unwrap();
                (d, xhat.len() / d, d)
            }
        };
        let rows = gy.len() / row_len;
        let is_batch = layout == NormLayout::Batch;
        let channel = |r: usize| r % groups;
        if let Some(dg) = self.acc(grads, gamma) {
            for r in 0..rows {
                let (g_row, h_row) = (&gy[r * row_len..(r + 1) * row_len], &xhat[r * row_len..(r + 1) * row_len]);
                if is_batch {
                    dg[channel(r)] += g_row.iter().zip(h_row).map(|(a, b)| a * b).sum::<f64>();
                } else {
                    for ((d, a), b) in dg.iter_mut().zip(g_row).zip(h_row) {
                        *d += a * b;
                    }
                }
            }
        }
        if let Some(dbeta) = self.acc(grads, beta) {
            for (r, g_row) in gy.chunks(row_len).enumerate() {
                if is_batch {
                    dbeta[channel(r)] += g_row.iter().sum::<f64>();
                } else {
                    for (d, a) in dbeta.iter_mut().zip(g_row) {
                        *d += a;
                    }
                }
            }
        }
        if !self.needs(x) {
            return;
        }
        // dh = gy * gamma, evaluated per row.
        let dh_row = |r: usize, out: &mut [f64]| {
            let g_row = &gy[r * row_len..(r + 1) * row_len];
            if is_batch {
                let gamma = gv[channel(r)];
                for (o, a) in out.iter_mut().zip(g_row) {
                    *o = a * gamma;
                }
            } else {
                for ((o, a), gamma) in out.iter_mut().zip(g_row).zip(&gv) {
                    *o = a * gamma;
                }
            }
        };
        let group_of = |r: usize| if is_batch { channel(r) } else { r };
        let mut dh = vec![0.0; row_len];
        let mut sum_d = vec![0.0; groups];
        let mut sum_dx = vec![0.0; groups];
        if batch_stats {
            for r in 0..rows {
                dh_row(r, &mut dh);
                let grp = group_of(r);
                let h_row = &xhat[r * row_len..(r + 1) * row_len];
                sum_d[grp] += dh.iter().sum::<f64>();
                sum_dx[grp] += dh.iter().zip(h_row).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let n = group_size as f64;
        let dx = self.acc(grads, x).expect("needs grad");
        for r in 0..rows {
            dh_row(r, &mut dh);
            let grp = group_of(r);
            let h_row = &xhat[r * row_len..(r + 1) * row_len];
            let dx_row = &mut dx[r * row_len..(r + 1) * row_len];
            let is = inv_std[grp];
            if batch_stats {
                let (sd, sdx) = (sum_d[grp], sum_dx[grp]);
                for ((o, d), h) in dx_row.iter_mut().zip(&dh).zip(h_row) {
                    *o += is / n * (n * d - sd - h * sdx);
                }
            } else {
                for (o, d) in dx_row.iter_mut().zip(&dh) {
                    *o += d * is;
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

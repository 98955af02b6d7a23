//! Tape-based reverse-mode automatic differentiation.
//!
//! A `Graph` records every operation of one forward pass; `backward` replays
//! the tape in reverse and accumulates gradients into every node that
//! transitively depends on a gradient-requiring leaf. The graph is rebuilt
//! each training step and dropped after the parameter update.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Additive mask sentinel: the most negative finite f64. Adding it to any
/// finite logit drives the softmax weight to exactly zero after
/// max-subtraction.
pub const NEG_SENTINEL: f64 = f64::MIN;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

/// Per-row allowed-index sets for masked softmax ops.
pub type RowMasks = Vec<Rc<Vec<u32>>>;

enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    AddScalar { x: NodeId },
    /// x: [r,c] plus b: [c], broadcast over rows.
    AddBias { x: NodeId, b: NodeId },
    /// x: [C,T] plus b: [C], broadcast along time.
    AddChannelBias { x: NodeId, b: NodeId },
    MatMul { a: NodeId, b: NodeId },
    /// a · bᵀ for a: [m,k], b: [n,k].
    MatMulNT { a: NodeId, b: NodeId },
    Transpose { x: NodeId },
    Conv1d { x: NodeId, w: NodeId, stride: usize, padding: usize, dilation: usize },
    ConvT1d { x: NodeId, w: NodeId, stride: usize, padding: usize },
    Relu { x: NodeId },
    LeakyRelu { x: NodeId, slope: f64 },
    Tanh { x: NodeId },
    Log { x: NodeId },
    Sqrt { x: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    SoftmaxRows { x: NodeId },
    LogSoftmaxRows { x: NodeId },
    MaskedLogSoftmaxRows { x: NodeId, allowed: Rc<RowMasks> },
    Embedding { table: NodeId, ids: Rc<Vec<u32>> },
    RepeatRows { x: NodeId, times: usize },
    RepeatInterleaveRows { x: NodeId, counts: Rc<Vec<usize>> },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    SliceRows { x: NodeId, start: usize },
    SliceCols { x: NodeId, start: usize },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    MeanRows { x: NodeId },
    Reshape { x: NodeId },
    SmoothedNllRows {
        logp: NodeId,
        golds: Rc<Vec<u32>>,
        allowed: Option<Rc<RowMasks>>,
        smoothing: f64,
    },
    Dropout { x: NodeId, mask: Rc<Vec<f64>> },
    L1Loss { a: NodeId, b: NodeId },
    MseLoss { a: NodeId, b: NodeId },
    MseToConst { x: NodeId, c: f64 },
    Frames { x: NodeId, window: usize, hop: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Unrolled dot product: four independent accumulators so the reduction
/// vectorizes while staying deterministic (fixed summation order).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

// Plain matrix kernels shared by forward and backward passes.
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    // a: [m,k], b: [n,k] -> out [m,n]
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(arow, brow);
        }
    }
}

pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    // aᵀ · b for a: [k,m], b: [k,n] -> out [m,n]
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn conv1d_out_len(t: usize, k: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    let padded = t + 2 * padding;
    if span > padded {
        return None;
    }
    Some((padded - span) / stride + 1)
}

pub fn convt1d_out_len(t: usize, k: usize, stride: usize, padding: usize) -> usize {
    (t - 1) * stride + k - 2 * padding
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` call w.r.t. node `id`, if any reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    // ── elementwise ─────────────────────────────────────────────────

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub { a, b }, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::Scale { x, c }, ng)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.value(x).data().iter().map(|v| v + c).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::AddScalar { x }, ng)
    }

    /// x: [r,c] + b: [c] broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        if self.value(b).numel() != c {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut data = self.value(x).data().to_vec();
        let bv = self.value(b).data();
        for i in 0..r {
            for (o, &bb) in data[i * c..(i + 1) * c].iter_mut().zip(bv) {
                *o += bb;
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddBias { x, b }, ng))
    }

    /// x: [C,T] + b: [C], one bias per channel row.
    pub fn add_channel_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        if self.value(b).numel() != r {
            return Err(Error::Dimension {
                op: "add_channel_bias",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut data = self.value(x).data().to_vec();
        let bv = self.value(b).data();
        for i in 0..r {
            let bb = bv[i];
            for o in data[i * c..(i + 1) * c].iter_mut() {
                *o += bb;
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddChannelBias { x, b }, ng))
    }

    // ── linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = (self.value(a).rows(), self.value(a).cols());
        let (k2, n) = (self.value(b).rows(), self.value(b).cols());
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul { a, b }, ng))
    }

    /// a · bᵀ: a [m,k], b [n,k] -> [m,n].
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = (self.value(a).rows(), self.value(a).cols());
        let (n, k2) = (self.value(b).rows(), self.value(b).cols());
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul_nt",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMulNT { a, b }, ng))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        let xd = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::Transpose { x }, ng)
    }

    // ── convolutions ────────────────────────────────────────────────

    /// Cross-correlation: x [Ci,T], w [Co,Ci,K] -> [Co,T'].
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 3 || xs[0] != ws[1] {
            return Err(Error::Dimension { op: "conv1d", lhs: xs, rhs: ws });
        }
        let (ci, t) = (xs[0], xs[1]);
        let (co, k) = (ws[0], ws[2]);
        let t_out = conv1d_out_len(t, k, stride, padding, dilation).ok_or(Error::Dimension {
            op: "conv1d: kernel span exceeds padded input",
            lhs: xs.clone(),
            rhs: ws.clone(),
        })?;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; co * t_out];
        for o in 0..co {
            let orow = &mut out[o * t_out..(o + 1) * t_out];
            for c in 0..ci {
                let xrow = &xd[c * t..(c + 1) * t];
                let wrow = &wd[(o * ci + c) * k..(o * ci + c + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    let off = kk * dilation;
                    for (tp, ov) in orow.iter_mut().enumerate() {
                        let src = tp * stride + off;
                        if src >= padding && src - padding < t {
                            *ov += wv * xrow[src - padding];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![co, t_out], out)?;
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::Conv1d { x, w, stride, padding, dilation }, ng))
    }

    /// Adjoint of conv1d: x [Ca,T], w [Ca,Cb,K] -> [Cb,(T-1)*stride - 2*padding + K].
    pub fn conv_transpose1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 3 || xs[0] != ws[0] {
            return Err(Error::Dimension { op: "conv_transpose1d", lhs: xs, rhs: ws });
        }
        let (ca, t) = (xs[0], xs[1]);
        let (cb, k) = (ws[1], ws[2]);
        let t_out = convt1d_out_len(t, k, stride, padding);
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; cb * t_out];
        for a in 0..ca {
            let xrow = &xd[a * t..(a + 1) * t];
            for b in 0..cb {
                let orow = &mut out[b * t_out..(b + 1) * t_out];
                let wrow = &wd[(a * cb + b) * k..(a * cb + b + 1) * k];
                for (tt, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let base = tt * stride;
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let dst = base + kk;
                        if dst >= padding && dst - padding < t_out {
                            orow[dst - padding] += xv * wv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![cb, t_out], out)?;
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(value, Op::ConvT1d { x, w, stride, padding }, ng))
    }

    // ── nonlinearities ──────────────────────────────────────────────

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::Relu { x }, ng)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::LeakyRelu { x, slope }, ng)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::Tanh { x }, ng)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|v| v.ln()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::Log { x }, ng)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).data().iter().map(|v| v.sqrt()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::Sqrt { x }, ng)
    }

    /// Normalize over the last axis, then scale by `gain` and shift by `bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        if self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let xd = self.value(x).data();
        let gd = self.value(gain).data();
        let bd = self.value(bias).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            let orow = &mut out[i * c..(i + 1) * c];
            for j in 0..c {
                orow[j] = (row[j] - mean) * inv * gd[j] + bd[j];
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, eps }, ng))
    }

    // ── softmax family ──────────────────────────────────────────────

    /// Row-wise softmax with max-subtraction.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        let xd = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let orow = &mut out[i * c..(i + 1) * c];
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - max).exp();
                orow[j] = e;
                z += e;
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::SoftmaxRows { x }, ng)
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        let xd = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::LogSoftmaxRows { x }, ng)
    }

    /// Row-wise log-softmax restricted to `allowed` indices. Disallowed
    /// entries are set to the `NEG_SENTINEL` and never enter the
    /// normalization; their gradient is exactly zero.
    pub fn masked_log_softmax_rows(&mut self, x: NodeId, allowed: Rc<RowMasks>) -> Result<NodeId> {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        if allowed.len() != r {
            return Err(Error::Dimension {
                op: "masked_log_softmax_rows",
                lhs: vec![r, c],
                rhs: vec![allowed.len()],
            });
        }
        let xd = self.value(x).data();
        let mut out = vec![NEG_SENTINEL; r * c];
        for (i, set) in allowed.iter().enumerate() {
            let row = &xd[i * c..(i + 1) * c];
            let mut max = f64::NEG_INFINITY;
            for &j in set.iter() {
                max = max.max(row[j as usize]);
            }
            let lse = set
                .iter()
                .map(|&j| (row[j as usize] - max).exp())
                .sum::<f64>()
                .ln()
                + max;
            for &j in set.iter() {
                out[i * c + j as usize] = row[j as usize] - lse;
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::MaskedLogSoftmaxRows { x, allowed }, ng))
    }

    // ── lookup and layout ───────────────────────────────────────────

    pub fn embedding(&mut self, table: NodeId, ids: Rc<Vec<u32>>) -> Result<NodeId> {
        let (v, d) = (self.value(table).rows(), self.value(table).cols());
        for &id in ids.iter() {
            if id as usize >= v {
                return Err(Error::Vocabulary(format!(
                    "embedding id {id} out of range for table of {v} rows"
                )));
            }
        }
        let td = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids.iter() {
            out.extend_from_slice(&td[id as usize * d..(id as usize + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        let ng = self.needs(table);
        Ok(self.push(value, Op::Embedding { table, ids }, ng))
    }

    /// Tile the rows of x `times` times: [r,c] -> [r*times, c].
    pub fn repeat_rows(&mut self, x: NodeId, times: usize) -> NodeId {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(r * times * c);
        for _ in 0..times {
            out.extend_from_slice(xd);
        }
        let value = Tensor::new(vec![r * times, c], out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::RepeatRows { x, times }, ng)
    }

    /// Repeat row i of x `counts[i]` times, preserving order.
    pub fn repeat_interleave_rows(&mut self, x: NodeId, counts: Rc<Vec<usize>>) -> Result<NodeId> {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        if counts.len() != r {
            return Err(Error::Dimension {
                op: "repeat_interleave_rows",
                lhs: vec![r, c],
                rhs: vec![counts.len()],
            });
        }
        let total: usize = counts.iter().sum();
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(total * c);
        for (i, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                out.extend_from_slice(&xd[i * c..(i + 1) * c]);
            }
        }
        let value = Tensor::new(vec![total, c], out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::RepeatInterleaveRows { x, counts }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let c = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            if self.value(p).cols() != c {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: vec![c],
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            rows += self.value(p).rows();
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, c], out)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatRows { parts: parts.to_vec() }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let r = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: vec![r],
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            cols += self.value(p).cols();
        }
        let mut out = vec![0.0; r * cols];
        let mut off = 0;
        for &p in parts {
            let pc = self.value(p).cols();
            let pd = self.value(p).data();
            for i in 0..r {
                out[i * cols + off..i * cols + off + pc].copy_from_slice(&pd[i * pc..(i + 1) * pc]);
            }
            off += pc;
        }
        let value = Tensor::new(vec![r, cols], out)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols { parts: parts.to_vec() }, ng))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        if start + len > r {
            return Err(Error::Dimension {
                op: "slice_rows",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let out = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::new(vec![len, c], out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::SliceRows { x, start }, ng))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        if start + len > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len].copy_from_slice(&xd[i * c + start..i * c + start + len]);
        }
        let value = Tensor::new(vec![r, len], out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::SliceCols { x, start }, ng))
    }

    // ── reductions ──────────────────────────────────────────────────

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll { x }, ng)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.value(x).data().iter().sum::<f64>() / n;
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::MeanAll { x }, ng)
    }

    /// Mean over rows: [r,c] -> [1,c].
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let (r, c) = (self.value(x).rows(), self.value(x).cols());
        let xd = self.value(x).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += xd[i * c + j];
            }
        }
        for o in out.iter_mut() {
            *o /= r as f64;
        }
        let value = Tensor::new(vec![1, c], out).unwrap();
        let ng = self.needs(x);
        self.push(value, Op::MeanRows { x }, ng)
    }

    /// Same data, new shape (element count preserved).
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.value(x).shape().to_vec(),
                rhs: shape,
            });
        }
        let value = Tensor::new(shape, self.value(x).data().to_vec())?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Reshape { x }, ng))
    }

    // ── losses ──────────────────────────────────────────────────────

    /// Per-row negative log-likelihood against a label-smoothed target over
    /// `allowed` (or the full row when `allowed` is `None`):
    /// `-( (1-s)*logp[gold] + s/|A| * sum_{i in A} logp[i] )`.
    pub fn smoothed_nll_rows(
        &mut self,
        logp: NodeId,
        golds: Rc<Vec<u32>>,
        allowed: Option<Rc<RowMasks>>,
        smoothing: f64,
    ) -> Result<NodeId> {
        let (r, c) = (self.value(logp).rows(), self.value(logp).cols());
        if golds.len() != r {
            return Err(Error::Dimension {
                op: "smoothed_nll_rows",
                lhs: vec![r, c],
                rhs: vec![golds.len()],
            });
        }
        let ld = self.value(logp).data();
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &ld[i * c..(i + 1) * c];
            let gold = golds[i] as usize;
            let mut loss = -(1.0 - smoothing) * row[gold];
            if smoothing > 0.0 {
                match &allowed {
                    Some(masks) => {
                        let set = &masks[i];
                        let mean: f64 =
                            set.iter().map(|&j| row[j as usize]).sum::<f64>() / set.len() as f64;
                        loss -= smoothing * mean;
                    }
                    None => {
                        let mean: f64 = row.iter().sum::<f64>() / c as f64;
                        loss -= smoothing * mean;
                    }
                }
            }
            out[i] = loss;
        }
        let value = Tensor::from_vec(out);
        let ng = self.needs(logp);
        Ok(self.push(value, Op::SmoothedNllRows { logp, golds, allowed, smoothing }, ng))
    }

    /// Inverted dropout with precomputed mask entries in {0, 1/keep}.
    pub fn dropout(&mut self, x: NodeId, mask: Rc<Vec<f64>>) -> Result<NodeId> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::Dimension {
                op: "dropout",
                lhs: vec![self.value(x).numel()],
                rhs: vec![mask.len()],
            });
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(v, m)| v * m)
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Dropout { x, mask }, ng))
    }

    pub fn l1_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("l1_loss", a, b)?;
        let n = self.value(a).numel() as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s), Op::L1Loss { a, b }, ng))
    }

    pub fn mse_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mse_loss", a, b)?;
        let n = self.value(a).numel() as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s), Op::MseLoss { a, b }, ng))
    }

    /// Mean squared distance to a constant target.
    pub fn mse_to_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let n = self.value(x).numel() as f64;
        let s: f64 = self
            .value(x)
            .data()
            .iter()
            .map(|v| (v - c) * (v - c))
            .sum::<f64>()
            / n;
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::MseToConst { x, c }, ng)
    }

    /// Frame a 1-D signal into overlapping windows: [T] -> [F, window].
    pub fn frames(&mut self, x: NodeId, window: usize, hop: usize) -> Result<NodeId> {
        let t = self.value(x).numel();
        if t < window {
            return Err(Error::InvalidArgument(format!(
                "frames: signal of {t} samples shorter than window {window}"
            )));
        }
        let f = (t - window) / hop + 1;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(f * window);
        for i in 0..f {
            out.extend_from_slice(&xd[i * hop..i * hop + window]);
        }
        let value = Tensor::new(vec![f, window], out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Frames { x, window, hop }, ng))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Gradients are accumulated for
    /// every node on a path from a gradient-requiring leaf to `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if self.grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = self.grads[i].take().unwrap();
            self.apply_backward(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let n = self.nodes[id.0].value.numel();
        let slot = &mut self.grads[id.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; n]);
        }
        f(slot.as_mut().unwrap());
    }

    fn apply_backward(&mut self, i: usize, g: &[f64]) {
        // Values are read through raw pointers into the node arena; nodes are
        // never resized during backward so the borrows cannot alias the grad
        // buffers being written.
        macro_rules! val {
            ($id:expr) => {
                unsafe { &*(&self.nodes[$id.0].value as *const Tensor) }
            };
        }
        let op = unsafe { &*(&self.nodes[i].op as *const Op) };
        match op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                self.accum(*a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                self.accum(*b, |gb| {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x += y;
                    }
                });
            }
            Op::Sub { a, b } => {
                self.accum(*a, |ga| {
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                self.accum(*b, |gb| {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                });
            }
            Op::Mul { a, b } => {
                let ad = val!(a).data();
                let bd = val!(b).data();
                self.accum(*a, |ga| {
                    for ((x, y), z) in ga.iter_mut().zip(g).zip(bd) {
                        *x += y * z;
                    }
                });
                self.accum(*b, |gb| {
                    for ((x, y), z) in gb.iter_mut().zip(g).zip(ad) {
                        *x += y * z;
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accum(*x, |gx| {
                    for (o, y) in gx.iter_mut().zip(g) {
                        *o += c * y;
                    }
                });
            }
            Op::AddScalar { x } => {
                self.accum(*x, |gx| {
                    for (o, y) in gx.iter_mut().zip(g) {
                        *o += y;
                    }
                });
            }
            Op::AddBias { x, b } => {
                let (r, c) = (val!(x).rows(), val!(x).cols());
                self.accum(*x, |gx| {
                    for (o, y) in gx.iter_mut().zip(g) {
                        *o += y;
                    }
                });
                self.accum(*b, |gb| {
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] += g[i * c + j];
                        }
                    }
                });
            }
            Op::AddChannelBias { x, b } => {
                let (r, c) = (val!(x).rows(), val!(x).cols());
                self.accum(*x, |gx| {
                    for (o, y) in gx.iter_mut().zip(g) {
                        *o += y;
                    }
                });
                self.accum(*b, |gb| {
                    for i in 0..r {
                        gb[i] += g[i * c..(i + 1) * c].iter().sum::<f64>();
                    }
                });
            }
            Op::MatMul { a, b } => {
                let (m, k) = (val!(a).rows(), val!(a).cols());
                let n = val!(b).cols();
                let ad = val!(a).data();
                let bd = val!(b).data();
                // dA = g · Bᵀ, dB = Aᵀ · g
                self.accum(*a, |ga| matmul_nt(g, bd, m, n, k, ga));
                self.accum(*b, |gb| matmul_tn(ad, g, k, m, n, gb));
            }
            Op::MatMulNT { a, b } => {
                let (m, k) = (val!(a).rows(), val!(a).cols());
                let n = val!(b).rows();
                let ad = val!(a).data();
                let bd = val!(b).data();
                // out = A·Bᵀ [m,n]; dA = g·B, dB = gᵀ·A
                self.accum(*a, |ga| matmul_nn(g, bd, m, n, k, ga));
                self.accum(*b, |gb| matmul_tn(g, ad, n, m, k, gb));
            }
            Op::Transpose { x } => {
                let (r, c) = (val!(x).rows(), val!(x).cols());
                self.accum(*x, |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Conv1d { x, w, stride, padding, dilation } => {
                let (stride, padding, dilation) = (*stride, *padding, *dilation);
                let xs = val!(x).shape();
                let ws = val!(w).shape();
                let (ci, t) = (xs[0], xs[1]);
                let (co, k) = (ws[0], ws[2]);
                let t_out = val!(NodeId(i)).cols();
                let xd = val!(x).data();
                let wd = val!(w).data();
                self.accum(*x, |gx| {
                    for o in 0..co {
                        let grow = &g[o * t_out..(o + 1) * t_out];
                        for c in 0..ci {
                            let wrow = &wd[(o * ci + c) * k..(o * ci + c + 1) * k];
                            let gxr = &mut gx[c * t..(c + 1) * t];
                            for (kk, &wv) in wrow.iter().enumerate() {
                                if wv == 0.0 {
                                    continue;
                                }
                                let off = kk * dilation;
                                for (tp, &gv) in grow.iter().enumerate() {
                                    let src = tp * stride + off;
                                    if src >= padding && src - padding < t {
                                        gxr[src - padding] += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                });
                self.accum(*w, |gw| {
                    for o in 0..co {
                        let grow = &g[o * t_out..(o + 1) * t_out];
                        for c in 0..ci {
                            let xrow = &xd[c * t..(c + 1) * t];
                            let gwr = &mut gw[(o * ci + c) * k..(o * ci + c + 1) * k];
                            for (kk, gv) in gwr.iter_mut().enumerate() {
                                let off = kk * dilation;
                                let mut acc = 0.0;
                                for (tp, &gg) in grow.iter().enumerate() {
                                    let src = tp * stride + off;
                                    if src >= padding && src - padding < t {
                                        acc += gg * xrow[src - padding];
                                    }
                                }
                                *gv += acc;
                            }
                        }
                    }
                });
            }
            Op::ConvT1d { x, w, stride, padding } => {
                let (stride, padding) = (*stride, *padding);
                let xs = val!(x).shape();
                let ws = val!(w).shape();
                let (ca, t) = (xs[0], xs[1]);
                let (cb, k) = (ws[1], ws[2]);
                let t_out = val!(NodeId(i)).cols();
                let xd = val!(x).data();
                let wd = val!(w).data();
                self.accum(*x, |gx| {
                    for a in 0..ca {
                        let gxr = &mut gx[a * t..(a + 1) * t];
                        for b in 0..cb {
                            let grow = &g[b * t_out..(b + 1) * t_out];
                            let wrow = &wd[(a * cb + b) * k..(a * cb + b + 1) * k];
                            for (tt, gv) in gxr.iter_mut().enumerate() {
                                let base = tt * stride;
                                let mut acc = 0.0;
                                for (kk, &wv) in wrow.iter().enumerate() {
                                    let dst = base + kk;
                                    if dst >= padding && dst - padding < t_out {
                                        acc += wv * grow[dst - padding];
                                    }
                                }
                                *gv += acc;
                            }
                        }
                    }
                });
                self.accum(*w, |gw| {
                    for a in 0..ca {
                        let xrow = &xd[a * t..(a + 1) * t];
                        for b in 0..cb {
                            let grow = &g[b * t_out..(b + 1) * t_out];
                            let gwr = &mut gw[(a * cb + b) * k..(a * cb + b + 1) * k];
                            for (tt, &xv) in xrow.iter().enumerate() {
                                if xv == 0.0 {
                                    continue;
                                }
                                let base = tt * stride;
                                for (kk, gv) in gwr.iter_mut().enumerate() {
                                    let dst = base + kk;
                                    if dst >= padding && dst - padding < t_out {
                                        *gv += xv * grow[dst - padding];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let xd = val!(x).data();
                self.accum(*x, |gx| {
                    for ((o, y), &v) in gx.iter_mut().zip(g).zip(xd) {
                        if v > 0.0 {
                            *o += y;
                        }
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let slope = *slope;
                let xd = val!(x).data();
                self.accum(*x, |gx| {
                    for ((o, y), &v) in gx.iter_mut().zip(g).zip(xd) {
                        *o += if v >= 0.0 { *y } else { slope * y };
                    }
                });
            }
            Op::Tanh { x } => {
                let yd = val!(NodeId(i)).data();
                self.accum(*x, |gx| {
                    for ((o, y), &t) in gx.iter_mut().zip(g).zip(yd) {
                        *o += y * (1.0 - t * t);
                    }
                });
            }
            Op::Log { x } => {
                let xd = val!(x).data();
                self.accum(*x, |gx| {
                    for ((o, y), &v) in gx.iter_mut().zip(g).zip(xd) {
                        *o += y / v;
                    }
                });
            }
            Op::Sqrt { x } => {
                let yd = val!(NodeId(i)).data();
                self.accum(*x, |gx| {
                    for ((o, y), &s) in gx.iter_mut().zip(g).zip(yd) {
                        *o += y / (2.0 * s.max(1e-300));
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let eps = *eps;
                let (r, c) = (val!(x).rows(), val!(x).cols());
                let xd = val!(x).data();
                let gd = val!(gain).data();
                self.accum(*x, |gx| {
                    for row in 0..r {
                        let xr = &xd[row * c..(row + 1) * c];
                        let gr = &g[row * c..(row + 1) * c];
                        let mean = xr.iter().sum::<f64>() / c as f64;
                        let var =
                            xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        // dl/dxhat_j = g_j * gain_j
                        let mut sum_dh = 0.0;
                        let mut sum_dh_xhat = 0.0;
                        for j in 0..c {
                            let xhat = (xr[j] - mean) * inv;
                            let dh = gr[j] * gd[j];
                            sum_dh += dh;
                            sum_dh_xhat += dh * xhat;
                        }
                        let gxr = &mut gx[row * c..(row + 1) * c];
                        for j in 0..c {
                            let xhat = (xr[j] - mean) * inv;
                            let dh = gr[j] * gd[j];
                            gxr[j] += inv
                                * (dh - sum_dh / c as f64 - xhat * sum_dh_xhat / c as f64);
                        }
                    }
                });
                self.accum(*gain, |gg| {
                    for row in 0..r {
                        let xr = &xd[row * c..(row + 1) * c];
                        let gr = &g[row * c..(row + 1) * c];
                        let mean = xr.iter().sum::<f64>() / c as f64;
                        let var =
                            xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        for j in 0..c {
                            gg[j] += gr[j] * (xr[j] - mean) * inv;
                        }
                    }
                });
                self.accum(*bias, |gb| {
                    for row in 0..r {
                        for j in 0..c {
                            gb[j] += g[row * c + j];
                        }
                    }
                });
            }
            Op::SoftmaxRows { x } => {
                let (r, c) = (val!(x).rows(), val!(x).cols());
                let pd = val!(NodeId(i)).data();
                self.accum(*x, |gx| {
                    for row in 0..r {
                        let p = &pd[row * c..(row + 1) * c];
                        let gr = &g[row * c..(row + 1) * c];
                        let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let gxr = &mut gx[row * c..(row + 1) * c];
                        for j in 0..c {
                            gxr[j] += p[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows { x } => {
                let (r, c) = (val!(x).rows(), val!(x).cols());
                let ld = val!(NodeId(i)).data();
                self.accum(*x, |gx| {
                    for row in 0..r {
                        let lr = &ld[row * c..(row + 1) * c];
                        let gr = &g[row * c..(row + 1) * c];
                        let gsum: f64 = gr.iter().sum();
                        let gxr = &mut gx[row * c..(row + 1) * c];
                        for j in 0..c {
                            gxr[j] += gr[j] - lr[j].exp() * gsum;
                        }
                    }
                });
            }
            Op::MaskedLogSoftmaxRows { x, allowed } => {
                let c = val!(x).cols();
                let ld = val!(NodeId(i)).data();
                let allowed = Rc::clone(allowed);
                self.accum(*x, |gx| {
                    for (row, set) in allowed.iter().enumerate() {
                        let lr = &ld[row * c..(row + 1) * c];
                        let gr = &g[row * c..(row + 1) * c];
                        let gsum: f64 = set.iter().map(|&j| gr[j as usize]).sum();
                        let gxr = &mut gx[row * c..(row + 1) * c];
                        for &j in set.iter() {
                            let j = j as usize;
                            gxr[j] += gr[j] - lr[j].exp() * gsum;
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = val!(table).cols();
                let ids = Rc::clone(ids);
                self.accum(*table, |gt| {
                    for (row, &id) in ids.iter().enumerate() {
                        let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                        let src = &g[row * d..(row + 1) * d];
                        for (o, y) in dst.iter_mut().zip(src) {
                            *o += y;
                        }
                    }
                });
            }
            Op::RepeatRows { x, times } => {
                let times = *times;
                let n = val!(x).numel();
                self.accum(*x, |gx| {
                    for rep in 0..times {
                        for (o, y) in gx.iter_mut().zip(&g[rep * n..(rep + 1) * n]) {
                            *o += y;
                        }
                    }
                });
            }
            Op::RepeatInterleaveRows { x, counts } => {
                let c = val!(x).cols();
                let counts = Rc::clone(counts);
                self.accum(*x, |gx| {
                    let mut src = 0;
                    for (row, &n) in counts.iter().enumerate() {
                        let dst = &mut gx[row * c..(row + 1) * c];
                        for _ in 0..n {
                            for (o, y) in dst.iter_mut().zip(&g[src * c..(src + 1) * c]) {
                                *o += y;
                            }
                            src += 1;
                        }
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let parts = parts.clone();
                let mut off = 0;
                for p in parts {
                    let n = val!(p).numel();
                    let seg = &g[off..off + n];
                    self.accum(p, |gp| {
                        for (o, y) in gp.iter_mut().zip(seg) {
                            *o += y;
                        }
                    });
                    off += n;
                }
            }
            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let r = val!(parts[0]).rows();
                let total: usize = parts.iter().map(|&p| val!(p).cols()).sum();
                let mut off = 0;
                for p in parts {
                    let pc = val!(p).cols();
                    self.accum(p, |gp| {
                        for i in 0..r {
                            for j in 0..pc {
                                gp[i * pc + j] += g[i * total + off + j];
                            }
                        }
                    });
                    off += pc;
                }
            }
            Op::SliceRows { x, start } => {
                let start = *start;
                let c = val!(x).cols();
                self.accum(*x, |gx| {
                    for (o, y) in gx[start * c..start * c + g.len()].iter_mut().zip(g) {
                        *o += y;
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let start = *start;
                let c = val!(x).cols();
                let len = val!(NodeId(i)).cols();
                let r = val!(NodeId(i)).rows();
                self.accum(*x, |gx| {
                    for row in 0..r {
                        for j in 0..len {
                            gx[row * c + start + j] += g[row * len + j];
                        }
                    }
                });
            }
            Op::SumAll { x } => {
                let gv = g[0];
                self.accum(*x, |gx| {
                    for o in gx.iter_mut() {
                        *o += gv;
                    }
                });
            }
            Op::MeanAll { x } => {
                let n = val!(x).numel() as f64;
                let gv = g[0] / n;
                self.accum(*x, |gx| {
                    for o in gx.iter_mut() {
                        *o += gv;
                    }
                });
            }
            Op::MeanRows { x } => {
                let (r, c) = (val!(x).rows(), val!(x).cols());
                self.accum(*x, |gx| {
                    for row in 0..r {
                        for j in 0..c {
                            gx[row * c + j] += g[j] / r as f64;
                        }
                    }
                });
            }
            Op::Reshape { x } => {
                self.accum(*x, |gx| {
                    for (o, y) in gx.iter_mut().zip(g) {
                        *o += y;
                    }
                });
            }
            Op::SmoothedNllRows { logp, golds, allowed, smoothing } => {
                let c = val!(logp).cols();
                let golds = Rc::clone(golds);
                let allowed = allowed.clone();
                let smoothing = *smoothing;
                self.accum(*logp, |gl| {
                    for (row, &gold) in golds.iter().enumerate() {
                        let gr = g[row];
                        gl[row * c + gold as usize] -= (1.0 - smoothing) * gr;
                        if smoothing > 0.0 {
                            match &allowed {
                                Some(masks) => {
                                    let set = &masks[row];
                                    let w = smoothing / set.len() as f64;
                                    for &j in set.iter() {
                                        gl[row * c + j as usize] -= w * gr;
                                    }
                                }
                                None => {
                                    let w = smoothing / c as f64;
                                    for j in 0..c {
                                        gl[row * c + j] -= w * gr;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                let mask = Rc::clone(mask);
                self.accum(*x, |gx| {
                    for ((o, y), m) in gx.iter_mut().zip(g).zip(mask.iter()) {
                        *o += y * m;
                    }
                });
            }
            Op::L1Loss { a, b } => {
                let ad = val!(a).data();
                let bd = val!(b).data();
                let n = ad.len() as f64;
                let gv = g[0] / n;
                // subgradient 0 at exact equality
                let sign = |d: f64| {
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                self.accum(*a, |ga| {
                    for (o, (x, y)) in ga.iter_mut().zip(ad.iter().zip(bd)) {
                        *o += gv * sign(x - y);
                    }
                });
                self.accum(*b, |gb| {
                    for (o, (x, y)) in gb.iter_mut().zip(ad.iter().zip(bd)) {
                        *o -= gv * sign(x - y);
                    }
                });
            }
            Op::MseLoss { a, b } => {
                let ad = val!(a).data();
                let bd = val!(b).data();
                let n = ad.len() as f64;
                let gv = 2.0 * g[0] / n;
                self.accum(*a, |ga| {
                    for (o, (x, y)) in ga.iter_mut().zip(ad.iter().zip(bd)) {
                        *o += gv * (x - y);
                    }
                });
                self.accum(*b, |gb| {
                    for (o, (x, y)) in gb.iter_mut().zip(ad.iter().zip(bd)) {
                        *o -= gv * (x - y);
                    }
                });
            }
            Op::MseToConst { x, c } => {
                let c = *c;
                let xd = val!(x).data();
                let n = xd.len() as f64;
                let gv = 2.0 * g[0] / n;
                self.accum(*x, |gx| {
                    for (o, &v) in gx.iter_mut().zip(xd) {
                        *o += gv * (v - c);
                    }
                });
            }
            Op::Frames { x, window, hop } => {
                let (window, hop) = (*window, *hop);
                let f = val!(NodeId(i)).rows();
                self.accum(*x, |gx| {
                    for fi in 0..f {
                        let src = &g[fi * window..(fi + 1) * window];
                        for (o, y) in gx[fi * hop..fi * hop + window].iter_mut().zip(src) {
                            *o += y;
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let eye = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let b = Tensor::from_rows(&[vec![2.0, 5.0, 1.0], vec![-1.0, 0.5, 3.0], vec![7.0, 2.0, 9.0]])
            .unwrap();
        let i = g.constant(eye);
        let bn = g.constant(b.clone());
        let out = g.matmul(i, bn).unwrap();
        assert_eq!(g.value(out).data(), b.data());
    }

    #[test]
    fn matmul_hand_example() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        let out = g.matmul(a, b).unwrap();
        assert_eq!(g.value(out).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn conv1d_unit_kernel_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let y = g.conv1d(x, w, 1, 0, 1).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv1d_hand_example() {
        // x=[1,2,3,4], kernel [1,1], stride 2, pad 0 -> [3,7]
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap());
        let y = g.conv1d(x, w, 2, 0, 1).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 7.0]);
    }

    #[test]
    fn conv1d_kernel_too_large_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1, 5], vec![1.0; 5]).unwrap());
        assert!(g.conv1d(x, w, 1, 0, 1).is_err());
    }

    #[test]
    fn conv_transpose_unit_kernel_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let y = g.conv_transpose1d(x, w, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_T(y)> for random x, y.
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &(stride, padding) in &[(1usize, 0usize), (2, 1), (3, 2)] {
            let (ci, co, k, t) = (2, 3, 4, 12);
            let x = Tensor::randn(&[ci, t], 1.0, &mut rng);
            let w = Tensor::randn(&[co, ci, k], 1.0, &mut rng);
            let mut g = Graph::new();
            let xn = g.constant(x.clone());
            let wn = g.constant(w.clone());
            let cx = g.conv1d(xn, wn, stride, padding, 1).unwrap();
            let t_out = g.value(cx).cols();
            let y = Tensor::randn(&[co, t_out], 1.0, &mut rng);
            let lhs: f64 = g.value(cx).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();

            let yn = g.constant(y);
            let ct = g.conv_transpose1d(yn, wn, stride, padding).unwrap();
            // conv_T output may be shorter than t when conv floor-truncates.
            let tr = g.value(ct).cols();
            assert!(tr <= t);
            let mut rhs = 0.0;
            for c in 0..ci {
                for tt in 0..tr {
                    rhs += x.data()[c * t + tt] * g.value(ct).data()[c * tr + tt];
                }
            }
            // pick sizes where conv consumed the whole input
            if (t + 2 * padding - k) % stride == 0 {
                assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "stride {stride}");
            }
        }
    }

    #[test]
    fn softmax_constant_vector_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 5], vec![3.3; 5]).unwrap());
        let p = g.softmax_rows(x);
        for &v in g.value(p).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_magnitudes_normalized() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 3], vec![1e8, -1e8, 700.0]).unwrap());
        let p = g.softmax_rows(x);
        let s: f64 = g.value(p).data().iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
        assert!(g.value(p).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn layer_norm_unit_gain_zero_bias() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let gain = g.constant(Tensor::from_vec(vec![1.0; 3]));
        let bias = g.constant(Tensor::from_vec(vec![0.0; 3]));
        let y = g.layer_norm(x, gain, bias, 0.0).unwrap();
        let d = g.value(y).data();
        let mean: f64 = d.iter().sum::<f64>() / 3.0;
        let var: f64 = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_out_of_range() {
        let mut g = Graph::new();
        let table = g.constant(Tensor::zeros(&[4, 2]));
        let err = g.embedding(table, Rc::new(vec![4])).unwrap_err();
        assert!(matches!(err, Error::Vocabulary(_)));
    }

    #[test]
    fn masked_log_softmax_rows_sums_to_one_and_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::new(vec![1, 5], vec![0.3, -2.0, 1.4, 0.0, 5.0]).unwrap(),
            true,
        );
        let allowed: Rc<RowMasks> = Rc::new(vec![Rc::new(vec![0u32, 2, 3])]);
        let lp = g.masked_log_softmax_rows(x, allowed).unwrap();
        let d = g.value(lp).data();
        let mass: f64 = [0usize, 2, 3].iter().map(|&j| d[j].exp()).sum();
        assert!((mass - 1.0).abs() <= 1e-12);
        assert_eq!(d[1], NEG_SENTINEL);
        assert_eq!(d[4], NEG_SENTINEL);

        let golds = Rc::new(vec![2u32]);
        let nll = g
            .smoothed_nll_rows(lp, golds, None, 0.0)
            .unwrap();
        let loss = g.sum_all(nll);
        g.backward(loss).unwrap();
        let gx = g.grad(x).unwrap();
        assert_eq!(gx[1], 0.0);
        assert_eq!(gx[4], 0.0);
        assert!(gx[2] != 0.0);
    }

    #[test]
    fn backward_shared_node_accumulates() {
        // y = x*x; dy/dx = 2x
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![3.0]), true);
        let y = g.mul(x, x).unwrap();
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }
}

//! Neural building blocks on top of the autodiff graph: linear layers,
//! 1-D convolutions, layer norm, multi-head attention, feed-forward blocks,
//! sinusoidal positions, and dropout plumbing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

use crate::error::Result;
use crate::numerics::{Attached, Graph, NodeId, ParamId, ParamStore, Tensor, NEG_SENTINEL};

/// Parameter registration context: a store plus the init RNG. Construction
/// order fixes both the checkpoint layout and the random stream.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Init { store, rng }
    }

    pub fn randn(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let t = Tensor::randn(shape, std, self.rng);
        self.store.register(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.register(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.register(name, Tensor::full(shape, 1.0))
    }
}

/// Training-time stochastic state; absent at inference.
pub struct TrainCtx {
    pub dropout: f64,
    pub rng: ChaCha8Rng,
}

impl TrainCtx {
    pub fn new(dropout: f64, seed: u64) -> Self {
        TrainCtx {
            dropout,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

pub fn apply_dropout(g: &mut Graph, x: NodeId, tc: Option<&mut TrainCtx>) -> Result<NodeId> {
    match tc {
        Some(ctx) if ctx.dropout > 0.0 => {
            let keep = 1.0 - ctx.dropout;
            let mask: Vec<f64> = (0..g.value(x).numel())
                .map(|_| {
                    if ctx.rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect();
            g.dropout(x, Rc::new(mask))
        }
        _ => Ok(x),
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let std = 1.0 / (in_dim as f64).sqrt();
        Ok(Linear {
            w: init.randn(&format!("{name}.w"), &[in_dim, out_dim], std)?,
            b: Some(init.zeros(&format!("{name}.b"), &[out_dim])?),
        })
    }

    pub fn new_no_bias(init: &mut Init, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let std = 1.0 / (in_dim as f64).sqrt();
        Ok(Linear {
            w: init.randn(&format!("{name}.w"), &[in_dim, out_dim], std)?,
            b: None,
        })
    }

    /// x: [T, in] -> [T, out]
    pub fn forward(&self, g: &mut Graph, ps: &Attached, x: NodeId) -> Result<NodeId> {
        let y = g.matmul(x, ps.node(self.w))?;
        match self.b {
            Some(b) => g.add_bias(y, ps.node(b)),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: init.ones(&format!("{name}.gain"), &[dim])?,
            bias: init.zeros(&format!("{name}.bias"), &[dim])?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &Attached, x: NodeId) -> Result<NodeId> {
        g.layer_norm(x, ps.node(self.gain), ps.node(self.bias), self.eps)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new(
        init: &mut Init,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Self> {
        let std = 1.0 / ((in_ch * kernel) as f64).sqrt();
        Ok(Conv1d {
            w: init.randn(&format!("{name}.w"), &[out_ch, in_ch, kernel], std)?,
            b: init.zeros(&format!("{name}.b"), &[out_ch])?,
            stride,
            padding,
            dilation,
        })
    }

    /// x: [C_in, T] -> [C_out, T']
    pub fn forward(&self, g: &mut Graph, ps: &Attached, x: NodeId) -> Result<NodeId> {
        let y = g.conv1d(x, ps.node(self.w), self.stride, self.padding, self.dilation)?;
        g.add_channel_bias(y, ps.node(self.b))
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose1d {
    pub fn new(
        init: &mut Init,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let std = 1.0 / ((in_ch * kernel) as f64 / stride as f64).sqrt();
        Ok(ConvTranspose1d {
            w: init.randn(&format!("{name}.w"), &[in_ch, out_ch, kernel], std)?,
            b: init.zeros(&format!("{name}.b"), &[out_ch])?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &Attached, x: NodeId) -> Result<NodeId> {
        let y = g.conv_transpose1d(x, ps.node(self.w), self.stride, self.padding)?;
        g.add_channel_bias(y, ps.node(self.b))
    }
}

/// Pre-norm multi-head attention.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(MultiHeadAttention {
            wq: Linear::new(init, &format!("{name}.q"), dim, dim)?,
            // a key bias shifts every score of a query row equally, which
            // softmax cancels; the parameter would be exactly inert
            wk: Linear::new_no_bias(init, &format!("{name}.k"), dim, dim)?,
            wv: Linear::new(init, &format!("{name}.v"), dim, dim)?,
            wo: Linear::new(init, &format!("{name}.o"), dim, dim)?,
            heads,
            dim,
        })
    }

    /// q_in: [Tq, dim], kv_in: [Tk, dim] -> [Tq, dim]. `causal` masks
    /// attention to positions after the query index.
    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &Attached,
        q_in: NodeId,
        kv_in: NodeId,
        causal: bool,
        mut tc: Option<&mut TrainCtx>,
    ) -> Result<NodeId> {
        let tq = g.value(q_in).rows();
        let tk = g.value(kv_in).rows();
        let hd = self.dim / self.heads;
        let q = self.wq.forward(g, ps, q_in)?;
        let k = self.wk.forward(g, ps, kv_in)?;
        let v = self.wv.forward(g, ps, kv_in)?;

        let causal_mask = if causal {
            let mut m = vec![0.0; tq * tk];
            for i in 0..tq {
                for j in 0..tk {
                    if j > i {
                        m[i * tk + j] = NEG_SENTINEL;
                    }
                }
            }
            Some(g.constant(Tensor::new(vec![tq, tk], m)?))
        } else {
            None
        };

        let mut heads_out = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * hd, hd)?;
            let kh = g.slice_cols(k, h * hd, hd)?;
            let vh = g.slice_cols(v, h * hd, hd)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scaled = g.scale(scores, 1.0 / (hd as f64).sqrt());
            let masked = match causal_mask {
                Some(m) => g.add(scaled, m)?,
                None => scaled,
            };
            let att = g.softmax_rows(masked);
            let att = apply_dropout(g, att, tc.as_deref_mut())?;
            heads_out.push(g.matmul(att, vh)?);
        }
        let cat = g.concat_cols(&heads_out)?;
        self.wo.forward(g, ps, cat)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(FeedForward {
            lin1: Linear::new(init, &format!("{name}.ff1"), dim, hidden)?,
            lin2: Linear::new(init, &format!("{name}.ff2"), hidden, dim)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &Attached,
        x: NodeId,
        tc: Option<&mut TrainCtx>,
    ) -> Result<NodeId> {
        let h = self.lin1.forward(g, ps, x)?;
        let h = g.relu(h);
        let h = apply_dropout(g, h, tc)?;
        self.lin2.forward(g, ps, h)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(EncoderLayer {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim)?,
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), dim, heads)?,
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim)?,
            ffn: FeedForward::new(init, &format!("{name}"), dim, ffn)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &Attached,
        x: NodeId,
        mut tc: Option<&mut TrainCtx>,
    ) -> Result<NodeId> {
        let n = self.ln1.forward(g, ps, x)?;
        let a = self.attn.forward(g, ps, n, n, false, tc.as_deref_mut())?;
        let a = apply_dropout(g, a, tc.as_deref_mut())?;
        let x = g.add(x, a)?;
        let n = self.ln2.forward(g, ps, x)?;
        let f = self.ffn.forward(g, ps, n, tc.as_deref_mut())?;
        let f = apply_dropout(g, f, tc)?;
        g.add(x, f)
    }
}

/// Pre-norm transformer decoder layer: causal self-attention, cross
/// attention over encoder states, feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub ln1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln3: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(DecoderLayer {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim)?,
            self_attn: MultiHeadAttention::new(init, &format!("{name}.self"), dim, heads)?,
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim)?,
            cross_attn: MultiHeadAttention::new(init, &format!("{name}.cross"), dim, heads)?,
            ln3: LayerNorm::new(init, &format!("{name}.ln3"), dim)?,
            ffn: FeedForward::new(init, &format!("{name}"), dim, ffn)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &Attached,
        x: NodeId,
        enc: NodeId,
        mut tc: Option<&mut TrainCtx>,
    ) -> Result<NodeId> {
        let n = self.ln1.forward(g, ps, x)?;
        let a = self.self_attn.forward(g, ps, n, n, true, tc.as_deref_mut())?;
        let a = apply_dropout(g, a, tc.as_deref_mut())?;
        let x = g.add(x, a)?;
        let n = self.ln2.forward(g, ps, x)?;
        let c = self.cross_attn.forward(g, ps, n, enc, false, tc.as_deref_mut())?;
        let c = apply_dropout(g, c, tc.as_deref_mut())?;
        let x = g.add(x, c)?;
        let n = self.ln3.forward(g, ps, x)?;
        let f = self.ffn.forward(g, ps, n, tc.as_deref_mut())?;
        let f = apply_dropout(g, f, tc)?;
        g.add(x, f)
    }
}

/// Sinusoidal position table [t, dim].
pub fn sinusoidal_positions(t: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; t * dim];
    for pos in 0..t {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[pos * dim + 2 * i] = angle.sin();
            data[pos * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![t, dim], data).unwrap()
}

/// x: [T, dim] plus constant sinusoidal positions.
pub fn add_positions(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let (t, dim) = (g.value(x).rows(), g.value(x).cols());
    let pe = g.constant(sinusoidal_positions(t, dim));
    g.add(x, pe)
}

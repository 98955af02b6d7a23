//! Multi-period and multi-scale discriminators emitting per-patch scores and
//! intermediate feature maps for feature matching.

use crate::error::Result;
use crate::nn::{Conv1d, Init};
use crate::numerics::{Attached, Graph, NodeId, Tensor};

pub struct PeriodDiscriminator {
    pub period: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl PeriodDiscriminator {
    pub fn new(init: &mut Init, name: &str, period: usize) -> Result<Self> {
        let convs = vec![
            Conv1d::new(init, &format!("{name}.c0"), period, 16, 5, 3, 2, 1)?,
            Conv1d::new(init, &format!("{name}.c1"), 16, 32, 5, 3, 2, 1)?,
        ];
        let post = Conv1d::new(init, &format!("{name}.post"), 32, 1, 3, 1, 1, 1)?;
        Ok(PeriodDiscriminator { period, convs, post })
    }

    /// waveform [1, T] -> (scores [1, M], feature maps).
    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &Attached,
        wave: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let t = g.value(wave).numel();
        let rows = t.div_ceil(self.period);
        let padded = rows * self.period;
        let x = if padded > t {
            let pad = g.constant(Tensor::zeros(&[1, padded - t]));
            let flat = g.reshape(wave, vec![1, t])?;
            g.concat_cols(&[flat, pad])?
        } else {
            wave
        };
        // fold into [rows, period] then treat the period axis as channels
        let folded = g.reshape(x, vec![rows, self.period])?;
        let mut h = g.transpose(folded); // [period, rows]
        let mut feats = Vec::new();
        for conv in &self.convs {
            h = conv.forward(g, ps, h)?;
            h = g.leaky_relu(h, 0.1);
            feats.push(h);
        }
        let score = self.post.forward(g, ps, h)?;
        Ok((score, feats))
    }
}

pub struct ScaleDiscriminator {
    pub scale: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl ScaleDiscriminator {
    pub fn new(init: &mut Init, name: &str, scale: usize) -> Result<Self> {
        let convs = vec![
            Conv1d::new(init, &format!("{name}.c0"), 1, 16, 15, 4, 7, 1)?,
            Conv1d::new(init, &format!("{name}.c1"), 16, 32, 15, 4, 7, 1)?,
        ];
        let post = Conv1d::new(init, &format!("{name}.post"), 32, 1, 3, 1, 1, 1)?;
        Ok(ScaleDiscriminator { scale, convs, post })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &Attached,
        wave: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let t = g.value(wave).numel();
        let mut h = g.reshape(wave, vec![1, t])?;
        if self.scale > 1 {
            // average pooling as a constant-kernel strided convolution
            let kernel = Tensor::new(
                vec![1, 1, self.scale],
                vec![1.0 / self.scale as f64; self.scale],
            )?;
            let k = g.constant(kernel);
            h = g.conv1d(h, k, self.scale, 0, 1)?;
        }
        let mut feats = Vec::new();
        for conv in &self.convs {
            h = conv.forward(g, ps, h)?;
            h = g.leaky_relu(h, 0.1);
            feats.push(h);
        }
        let score = self.post.forward(g, ps, h)?;
        Ok((score, feats))
    }
}

pub struct DiscriminatorSet {
    pub periods: Vec<PeriodDiscriminator>,
    pub scales: Vec<ScaleDiscriminator>,
}

impl DiscriminatorSet {
    pub fn new(init: &mut Init, periods: &[usize], scales: &[usize]) -> Result<Self> {
        let periods = periods
            .iter()
            .enumerate()
            .map(|(i, &p)| PeriodDiscriminator::new(init, &format!("disc.mpd{i}"), p))
            .collect::<Result<Vec<_>>>()?;
        let scales = scales
            .iter()
            .enumerate()
            .map(|(i, &s)| ScaleDiscriminator::new(init, &format!("disc.msd{i}"), s))
            .collect::<Result<Vec<_>>>()?;
        Ok(DiscriminatorSet { periods, scales })
    }

    /// All (score, feature-map) pairs for one waveform node.
    pub fn forward_all(
        &self,
        g: &mut Graph,
        ps: &Attached,
        wave: NodeId,
    ) -> Result<Vec<(NodeId, Vec<NodeId>)>> {
        let mut out = Vec::new();
        for d in &self.periods {
            out.push(d.forward(g, ps, wave)?);
        }
        for d in &self.scales {
            out.push(d.forward(g, ps, wave)?);
        }
        Ok(out)
    }
}

//! Unit-to-waveform generator and the per-unit duration predictor.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::{Conv1d, ConvTranspose1d, Init, LayerNorm, Linear};
use crate::numerics::{Attached, Graph, NodeId, ParamId, Tensor};
use crate::vocoder::VocoderConfig;

/// How the language embedding conditions the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LangConditioning {
    /// One extra leading frame (trimmed from the output audio).
    PrependFrame,
    /// Concatenated to every frame like the speaker embedding.
    ConcatPerFrame,
}

struct ResBlock {
    conv1: Conv1d,
    conv2: Conv1d,
}

pub struct Generator {
    pub unit_embedding: ParamId,
    pub speaker_embedding: ParamId,
    pub language_embedding: Option<ParamId>,
    /// Projects the 128-d language embedding into unit-embedding space for
    /// the prepended frame.
    lang_proj: Option<Linear>,
    pre: Conv1d,
    ups: Vec<ConvTranspose1d>,
    res: Vec<ResBlock>,
    post: Conv1d,
}

/// (stride, kernel, padding) per upsampling layer; output length is exactly
/// `stride * input_length` for each.
pub fn upsample_plan(hop: usize) -> Result<Vec<(usize, usize, usize)>> {
    let mut remaining = hop;
    let mut plan = Vec::new();
    for &f in &[10usize, 8, 6, 4, 5, 2, 3, 7] {
        while remaining % f == 0 && remaining > 1 {
            remaining /= f;
            plan.push(f);
        }
    }
    if remaining != 1 {
        return Err(Error::Config(format!(
            "hop {hop} has a prime factor > 10; cannot build the upsampler"
        )));
    }
    plan.sort_unstable_by(|a, b| b.cmp(a));
    Ok(plan
        .into_iter()
        .map(|s| {
            if s % 2 == 0 {
                (s, 2 * s, s / 2)
            } else {
                (s, 2 * s - 1, (s - 1) / 2)
            }
        })
        .collect())
}

impl Generator {
    pub fn new(init: &mut Init, cfg: &VocoderConfig) -> Result<Self> {
        let unit_embedding = init.randn("gen.unit_emb", &[cfg.k_units, cfg.unit_dim], 0.1)?;
        let speaker_embedding =
            init.randn("gen.spk_emb", &[cfg.num_speakers, cfg.spk_dim], 0.1)?;
        let (language_embedding, lang_proj) = if cfg.use_lang_embedding {
            let emb = init.randn("gen.lang_emb", &[cfg.langs.len(), cfg.lang_dim], 0.1)?;
            let proj = if cfg.lang_conditioning == LangConditioning::PrependFrame {
                Some(Linear::new(init, "gen.lang_proj", cfg.lang_dim, cfg.unit_dim)?)
            } else {
                None
            };
            (Some(emb), proj)
        } else {
            (None, None)
        };

        let mut in_ch = cfg.unit_dim + cfg.spk_dim;
        if cfg.use_lang_embedding && cfg.lang_conditioning == LangConditioning::ConcatPerFrame {
            in_ch += cfg.lang_dim;
        }
        let pre = Conv1d::new(init, "gen.pre", in_ch, cfg.base_channels, 7, 1, 3, 1)?;

        let plan = upsample_plan(cfg.hop)?;
        let mut ups = Vec::new();
        let mut ch = cfg.base_channels;
        for (i, &(stride, kernel, padding)) in plan.iter().enumerate() {
            let out_ch = (ch / 2).max(4);
            ups.push(ConvTranspose1d::new(
                init,
                &format!("gen.up{i}"),
                ch,
                out_ch,
                kernel,
                stride,
                padding,
            )?);
            ch = out_ch;
        }

        let dilations = [1usize, 3, 5, 7];
        let mut res = Vec::new();
        for b in 0..cfg.resblocks {
            let d = dilations[b % dilations.len()];
            res.push(ResBlock {
                conv1: Conv1d::new(init, &format!("gen.res{b}.c1"), ch, ch, 3, 1, d, d)?,
                conv2: Conv1d::new(init, &format!("gen.res{b}.c2"), ch, ch, 3, 1, 1, 1)?,
            });
        }
        let post = Conv1d::new(init, "gen.post", ch, 1, 7, 1, 3, 1)?;
        Ok(Generator {
            unit_embedding,
            speaker_embedding,
            language_embedding,
            lang_proj,
            pre,
            ups,
            res,
            post,
        })
    }

    /// Units + durations + speaker + language -> waveform node of exactly
    /// `hop * sum(durations)` samples in [-1, 1].
    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &Attached,
        cfg: &VocoderConfig,
        units: &[u32],
        durations: &[usize],
        speaker: u32,
        lang_index: usize,
    ) -> Result<NodeId> {
        if units.is_empty() || units.len() != durations.len() {
            return Err(Error::InvalidArgument(format!(
                "generator: {} units vs {} durations",
                units.len(),
                durations.len()
            )));
        }
        if speaker as usize >= cfg.num_speakers {
            return Err(Error::Vocabulary(format!(
                "speaker {speaker} outside table of {}",
                cfg.num_speakers
            )));
        }
        if cfg.use_lang_embedding && lang_index >= cfg.langs.len() {
            return Err(Error::Vocabulary(format!(
                "language index {lang_index} outside table of {}",
                cfg.langs.len()
            )));
        }

        let emb = g.embedding(ps.node(self.unit_embedding), Rc::new(units.to_vec()))?;
        let mut frames = g.repeat_interleave_rows(emb, Rc::new(durations.to_vec()))?;
        let total_frames: usize = durations.iter().sum();
        let mut prepended = false;

        if let (Some(lang_emb), true) = (self.language_embedding, cfg.use_lang_embedding) {
            match cfg.lang_conditioning {
                LangConditioning::PrependFrame => {
                    let le = g.embedding(ps.node(lang_emb), Rc::new(vec![lang_index as u32]))?;
                    let lead = self
                        .lang_proj
                        .as_ref()
                        .expect("prepend mode always builds the projection")
                        .forward(g, ps, le)?;
                    frames = g.concat_rows(&[lead, frames])?;
                    prepended = true;
                }
                LangConditioning::ConcatPerFrame => {}
            }
        }
        let rows = g.value(frames).rows();
        let spk = g.embedding(ps.node(self.speaker_embedding), Rc::new(vec![speaker]))?;
        let spk = g.repeat_rows(spk, rows);
        let mut cols = vec![frames, spk];
        if let (Some(lang_emb), LangConditioning::ConcatPerFrame, true) = (
            self.language_embedding,
            cfg.lang_conditioning,
            cfg.use_lang_embedding,
        ) {
            let le = g.embedding(ps.node(lang_emb), Rc::new(vec![lang_index as u32]))?;
            let le = g.repeat_rows(le, rows);
            cols.push(le);
        }
        let x = g.concat_cols(&cols)?;
        let mut h = g.transpose(x); // [C, frames]
        h = self.pre.forward(g, ps, h)?;
        for up in &self.ups {
            h = g.leaky_relu(h, 0.1);
            h = up.forward(g, ps, h)?;
        }
        for block in &self.res {
            let a = g.leaky_relu(h, 0.1);
            let a = block.conv1.forward(g, ps, a)?;
            let a = g.leaky_relu(a, 0.1);
            let a = block.conv2.forward(g, ps, a)?;
            h = g.add(h, a)?;
        }
        let h = g.leaky_relu(h, 0.1);
        let h = self.post.forward(g, ps, h)?;
        let wave = g.tanh(h); // [1, hop * rows]
        if prepended {
            g.slice_cols(wave, cfg.hop, cfg.hop * total_frames)
        } else {
            Ok(wave)
        }
    }
}

/// Small conv stack over (detached) unit embeddings predicting log duration
/// per unit.
pub struct DurationPredictor {
    conv1: Conv1d,
    ln1: LayerNorm,
    conv2: Conv1d,
    ln2: LayerNorm,
    out: Linear,
    pub hidden: usize,
}

impl DurationPredictor {
    pub fn new(init: &mut Init, unit_dim: usize) -> Result<Self> {
        let hidden = 32;
        Ok(DurationPredictor {
            conv1: Conv1d::new(init, "dur.c1", unit_dim, hidden, 3, 1, 1, 1)?,
            ln1: LayerNorm::new(init, "dur.ln1", hidden)?,
            conv2: Conv1d::new(init, "dur.c2", hidden, hidden, 3, 1, 1, 1)?,
            ln2: LayerNorm::new(init, "dur.ln2", hidden)?,
            out: Linear::new(init, "dur.out", hidden, 1)?,
            hidden,
        })
    }

    /// emb: [n_units, unit_dim] -> [n_units, 1] log-durations.
    pub fn forward(&self, g: &mut Graph, ps: &Attached, emb: NodeId) -> Result<NodeId> {
        let h = g.transpose(emb);
        let h = self.conv1.forward(g, ps, h)?;
        let h = g.relu(h);
        let h = g.transpose(h);
        let h = self.ln1.forward(g, ps, h)?;
        let h = g.transpose(h);
        let h = self.conv2.forward(g, ps, h)?;
        let h = g.relu(h);
        let h = g.transpose(h);
        let h = self.ln2.forward(g, ps, h)?;
        self.out.forward(g, ps, h)
    }

    /// exp + round, at least one frame per unit.
    pub fn predict(&self, log_durations: &Tensor) -> Vec<usize> {
        log_durations
            .data()
            .iter()
            .map(|&ld| ld.exp().round().max(1.0) as usize)
            .collect()
    }
}

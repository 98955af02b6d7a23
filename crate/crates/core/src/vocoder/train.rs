//! Alternating auxiliary / generator training with the least-squares GAN
//! objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Graph, NodeId, Tensor};
use crate::synthlang::Waveform;
use crate::util::mix_seed;
use crate::vocoder::VocoderBundle;

/// One training utterance: raw family units with gold durations, aligned
/// real audio, speaker and language conditioning.
#[derive(Debug, Clone)]
pub struct VocoderItem {
    pub units: Vec<u32>,
    pub durations: Vec<usize>,
    pub speaker: u32,
    pub lang_index: usize,
    pub wave: Waveform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxReport {
    pub discriminator_loss: f64,
    pub duration_loss: f64,
    pub lid_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VocoderLosses {
    pub mel_l1: f64,
    pub feature_matching: f64,
    pub adversarial: f64,
    pub lid_ce: f64,
    pub total: f64,
}

pub struct VocoderTrainer {
    pub bundle: VocoderBundle,
    pub adam_gen: Adam,
    pub adam_dur: Adam,
    pub adam_disc: Adam,
    pub adam_lid: Adam,
    rng: ChaCha8Rng,
    pub steps: u64,
}

struct Segment {
    units: Vec<u32>,
    durations: Vec<usize>,
    speaker: u32,
    lang_index: usize,
    real: Vec<f64>,
}

impl VocoderTrainer {
    pub fn new(bundle: VocoderBundle) -> Self {
        let lr = bundle.cfg.learning_rate;
        let adam_gen = Adam::new(AdamConfig::with_constant_lr(lr), &bundle.gen_store);
        let adam_dur = Adam::new(AdamConfig::with_constant_lr(lr), &bundle.dur_store);
        let adam_disc = Adam::new(AdamConfig::with_constant_lr(lr), &bundle.disc_store);
        let adam_lid = Adam::new(AdamConfig::with_constant_lr(lr), &bundle.lid_store);
        let rng = ChaCha8Rng::seed_from_u64(mix_seed(&[bundle.cfg.seed, 0x5e6]));
        VocoderTrainer {
            bundle,
            adam_gen,
            adam_dur,
            adam_disc,
            adam_lid,
            rng,
            steps: 0,
        }
    }

    /// Crop a random `segment_frames` window out of an utterance, slicing
    /// the unit run-lengths and the aligned audio.
    fn sample_segment(&mut self, item: &VocoderItem) -> Segment {
        let hop = self.bundle.cfg.hop;
        let total: usize = item.durations.iter().sum();
        let seg = self.bundle.cfg.segment_frames.min(total);
        let start = if total > seg {
            self.rng.random_range(0..total - seg + 1)
        } else {
            0
        };
        let mut units = Vec::new();
        let mut durations = Vec::new();
        let mut pos = 0usize;
        for (&u, &d) in item.units.iter().zip(&item.durations) {
            let lo = pos.max(start);
            let hi = (pos + d).min(start + seg);
            if hi > lo {
                units.push(u);
                durations.push(hi - lo);
            }
            pos += d;
            if pos >= start + seg {
                break;
            }
        }
        let samples = item.wave.to_f64();
        let lo = (start * hop).min(samples.len());
        let hi = ((start + seg) * hop).min(samples.len());
        let mut real = samples[lo..hi].to_vec();
        real.resize(seg * hop, 0.0);
        Segment {
            units,
            durations,
            speaker: item.speaker,
            lang_index: item.lang_index,
            real,
        }
    }

    fn fake_audio_detached(&self, seg: &Segment) -> Result<Tensor> {
        let mut g = Graph::new();
        let ps = self.bundle.gen_store.attach_frozen(&mut g);
        let wave = self.bundle.generator.forward(
            &mut g,
            &ps,
            &self.bundle.cfg,
            &seg.units,
            &seg.durations,
            seg.speaker,
            seg.lang_index,
        )?;
        Ok(g.value(wave).clone())
    }

    /// One optimizer step each for the discriminators (real vs detached
    /// fake), the duration predictor (MSE on log gold durations), and the
    /// LID classifier (cross-entropy on real audio).
    pub fn train_auxiliaries(&mut self, items: &[&VocoderItem]) -> Result<AuxReport> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("train_auxiliaries: empty batch".into()));
        }
        let segments: Vec<Segment> = items.iter().map(|it| self.sample_segment(it)).collect();
        let inv_n = 1.0 / segments.len() as f64;

        // discriminators
        let disc_loss = {
            let mut g = Graph::new();
            let ps = self.bundle.disc_store.attach(&mut g);
            let mut terms: Vec<NodeId> = Vec::new();
            for seg in &segments {
                let fake = self.fake_audio_detached(seg)?;
                let fake_n = g.constant(fake);
                let real_n = g.constant(Tensor::new(vec![1, seg.real.len()], seg.real.clone())?);
                for (score, _) in self.bundle.discriminators.forward_all(&mut g, &ps, real_n)? {
                    terms.push(g.mse_to_const(score, 1.0));
                }
                for (score, _) in self.bundle.discriminators.forward_all(&mut g, &ps, fake_n)? {
                    terms.push(g.mse_to_const(score, 0.0));
                }
            }
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.add(acc, t)?;
            }
            let loss = g.scale(acc, inv_n);
            let v = g.value(loss).data()[0];
            if !v.is_finite() {
                return Err(Error::Training("non-finite discriminator loss".into()));
            }
            g.backward(loss)?;
            let grads = self.bundle.disc_store.gradients(&g, &ps);
            self.adam_disc.step(&mut self.bundle.disc_store, &grads)?;
            v
        };

        // duration predictor on detached unit embeddings
        let duration_loss = {
            let mut g = Graph::new();
            let ps = self.bundle.dur_store.attach(&mut g);
            let emb_table = self
                .bundle
                .gen_store
                .value(self.bundle.generator.unit_embedding)
                .clone();
            let mut terms = Vec::new();
            for item in items {
                let d = emb_table.cols();
                let mut rows = Vec::with_capacity(item.units.len() * d);
                for &u in &item.units {
                    rows.extend_from_slice(emb_table.row(u as usize));
                }
                let emb = g.constant(Tensor::new(vec![item.units.len(), d], rows)?);
                let logd = self.bundle.duration.forward(&mut g, &ps, emb)?;
                let target: Vec<f64> = item.durations.iter().map(|&d| (d as f64).ln()).collect();
                let tgt = g.constant(Tensor::new(vec![item.units.len(), 1], target)?);
                terms.push(g.mse_loss(logd, tgt)?);
            }
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.add(acc, t)?;
            }
            let loss = g.scale(acc, inv_n);
            let v = g.value(loss).data()[0];
            if !v.is_finite() {
                return Err(Error::Training("non-finite duration loss".into()));
            }
            g.backward(loss)?;
            let grads = self.bundle.dur_store.gradients(&g, &ps);
            self.adam_dur.step(&mut self.bundle.dur_store, &grads)?;
            v
        };

        // LID classifier on real audio
        let lid_loss = {
            let mut g = Graph::new();
            let ps = self.bundle.lid_store.attach(&mut g);
            let mut terms = Vec::new();
            for seg in &segments {
                let real = g.constant(Tensor::from_vec(seg.real.clone()));
                let mel = self.bundle.mel.apply(&mut g, real)?;
                let logp = self.bundle.lid.log_probs(&mut g, &ps, mel)?;
                let nll = g.smoothed_nll_rows(
                    logp,
                    Rc::new(vec![seg.lang_index as u32]),
                    None,
                    0.0,
                )?;
                terms.push(g.sum_all(nll));
            }
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.add(acc, t)?;
            }
            let loss = g.scale(acc, inv_n);
            let v = g.value(loss).data()[0];
            if !v.is_finite() {
                return Err(Error::Training("non-finite LID loss".into()));
            }
            g.backward(loss)?;
            let grads = self.bundle.lid_store.gradients(&g, &ps);
            self.adam_lid.step(&mut self.bundle.lid_store, &grads)?;
            v
        };

        Ok(AuxReport {
            discriminator_loss: disc_loss,
            duration_loss,
            lid_loss,
        })
    }

    /// Generator step: weighted mel L1 + feature matching + least-squares
    /// adversarial + LID cross-entropy on generated audio. Discriminator and
    /// classifier parameters stay frozen.
    pub fn train_generator(&mut self, items: &[&VocoderItem]) -> Result<VocoderLosses> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("train_generator: empty batch".into()));
        }
        let segments: Vec<Segment> = items.iter().map(|it| self.sample_segment(it)).collect();
        let cfg = self.bundle.cfg.clone();
        let inv_n = 1.0 / segments.len() as f64;

        let mut g = Graph::new();
        let gen_ps = self.bundle.gen_store.attach(&mut g);
        let disc_ps = self.bundle.disc_store.attach_frozen(&mut g);
        let lid_ps = self.bundle.lid_store.attach_frozen(&mut g);

        let mut mel_terms = Vec::new();
        let mut fm_terms = Vec::new();
        let mut adv_terms = Vec::new();
        let mut lid_terms = Vec::new();
        for seg in &segments {
            let fake = self.bundle.generator.forward(
                &mut g,
                &gen_ps,
                &cfg,
                &seg.units,
                &seg.durations,
                seg.speaker,
                seg.lang_index,
            )?;
            let real = g.constant(Tensor::new(vec![1, seg.real.len()], seg.real.clone())?);
            let mel_f = self.bundle.mel.apply(&mut g, fake)?;
            let mel_r = self.bundle.mel.apply(&mut g, real)?;
            mel_terms.push(g.l1_loss(mel_f, mel_r)?);

            let fake_d = self.bundle.discriminators.forward_all(&mut g, &disc_ps, fake)?;
            let real_d = self.bundle.discriminators.forward_all(&mut g, &disc_ps, real)?;
            for ((score_f, feats_f), (_, feats_r)) in fake_d.iter().zip(&real_d) {
                adv_terms.push(g.mse_to_const(*score_f, 1.0));
                for (&ff, &fr) in feats_f.iter().zip(feats_r) {
                    fm_terms.push(g.l1_loss(ff, fr)?);
                }
            }
            if cfg.lambda_lid > 0.0 {
                let logp = self.bundle.lid.log_probs(&mut g, &lid_ps, mel_f)?;
                let nll = g.smoothed_nll_rows(
                    logp,
                    Rc::new(vec![seg.lang_index as u32]),
                    None,
                    0.0,
                )?;
                lid_terms.push(g.sum_all(nll));
            }
        }

        let mut sum_scaled = |g: &mut Graph, terms: &[NodeId], w: f64| -> Result<Option<NodeId>> {
            if terms.is_empty() || w == 0.0 {
                return Ok(None);
            }
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = g.add(acc, t)?;
            }
            Ok(Some(g.scale(acc, w * inv_n)))
        };
        let mel_node = sum_scaled(&mut g, &mel_terms, cfg.lambda_mel)?;
        let fm_node = sum_scaled(&mut g, &fm_terms, cfg.lambda_fm)?;
        let adv_node = sum_scaled(&mut g, &adv_terms, cfg.lambda_adv)?;
        let lid_node = sum_scaled(&mut g, &lid_terms, cfg.lambda_lid)?;

        let mut total = mel_node.ok_or_else(|| Error::Training("mel loss missing".into()))?;
        for part in [fm_node, adv_node, lid_node].into_iter().flatten() {
            total = g.add(total, part)?;
        }

        let report = VocoderLosses {
            mel_l1: raw_component(&g, mel_node, cfg.lambda_mel),
            feature_matching: raw_component(&g, fm_node, cfg.lambda_fm),
            adversarial: raw_component(&g, adv_node, cfg.lambda_adv),
            lid_ce: raw_component(&g, lid_node, cfg.lambda_lid),
            total: g.value(total).data()[0],
        };
        if !report.total.is_finite() {
            return Err(Error::Training("non-finite generator loss".into()));
        }
        g.backward(total)?;
        let grads = self.bundle.gen_store.gradients(&g, &gen_ps);
        self.adam_gen.step(&mut self.bundle.gen_store, &grads)?;
        self.steps += 1;
        Ok(report)
    }

    /// Auxiliaries then generator on the same items.
    pub fn train_step(&mut self, items: &[&VocoderItem]) -> Result<(AuxReport, VocoderLosses)> {
        let aux = self.train_auxiliaries(items)?;
        let gen = self.train_generator(items)?;
        Ok((aux, gen))
    }
}

fn value_of(g: &Graph, node: Option<NodeId>) -> f64 {
    node.map(|n| g.value(n).data()[0]).unwrap_or(0.0)
}

/// Un-weighted component value for reporting.
fn raw_component(g: &Graph, node: Option<NodeId>, lambda: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        value_of(g, node) / lambda
    }
}

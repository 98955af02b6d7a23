//! Differentiable log-mel spectrogram: framed Hann-windowed DFT by explicit
//! basis matmul, magnitude, mel-spaced triangular bands, log floor.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{Graph, NodeId, Tensor};

pub const MEL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
}

impl MelConfig {
    pub fn for_rate(sample_rate: u32, hop: usize) -> Self {
        MelConfig {
            window: (sample_rate as usize) / 40, // 25 ms
            hop,
            n_mels: if sample_rate >= 16000 { 96 } else { 64 },
            sample_rate,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Precomputed windowed-DFT and mel-filter matrices for one configuration.
pub struct MelAnalyzer {
    pub cfg: MelConfig,
    /// [window, bins], Hann window folded into the basis.
    cos_basis: Tensor,
    sin_basis: Tensor,
    /// [bins, n_mels]
    mel_weights: Tensor,
}

impl MelAnalyzer {
    pub fn new(cfg: MelConfig) -> Self {
        let w = cfg.window;
        let bins = w / 2 + 1;
        let mut cosb = vec![0.0; w * bins];
        let mut sinb = vec![0.0; w * bins];
        for i in 0..w {
            let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / w as f64).cos();
            for b in 0..bins {
                let ang = 2.0 * std::f64::consts::PI * (i * b) as f64 / w as f64;
                cosb[i * bins + b] = hann * ang.cos();
                sinb[i * bins + b] = -hann * ang.sin();
            }
        }
        let nyquist = cfg.sample_rate as f64 / 2.0;
        let hz_per_bin = cfg.sample_rate as f64 / w as f64;
        let mel_lo = 0.0;
        let mel_hi = hz_to_mel(nyquist);
        let edge = |i: usize| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64);
        let mut melw = vec![0.0; bins * cfg.n_mels];
        for m in 0..cfg.n_mels {
            let (lo, mid, hi) = (edge(m), edge(m + 1), edge(m + 2));
            for b in 0..bins {
                let f = b as f64 * hz_per_bin;
                let v = if f >= lo && f <= mid && mid > lo {
                    (f - lo) / (mid - lo)
                } else if f > mid && f <= hi && hi > mid {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                melw[b * cfg.n_mels + m] = v.max(0.0);
            }
        }
        MelAnalyzer {
            cfg,
            cos_basis: Tensor::new(vec![w, bins], cosb).unwrap(),
            sin_basis: Tensor::new(vec![w, bins], sinb).unwrap(),
            mel_weights: Tensor::new(vec![bins, cfg.n_mels], melw).unwrap(),
        }
    }

    /// waveform node (any shape, numel = T samples) -> [frames, n_mels],
    /// differentiable w.r.t. the waveform.
    pub fn apply(&self, g: &mut Graph, waveform: NodeId) -> Result<NodeId> {
        let frames = g.frames(waveform, self.cfg.window, self.cfg.hop)?;
        let cosb = g.constant(self.cos_basis.clone());
        let sinb = g.constant(self.sin_basis.clone());
        let re = g.matmul(frames, cosb)?;
        let im = g.matmul(frames, sinb)?;
        let re2 = g.mul(re, re)?;
        let im2 = g.mul(im, im)?;
        let power = g.add(re2, im2)?;
        // tiny epsilon keeps sqrt differentiable at silence
        let power = g.add_scalar(power, 1e-12);
        let mag = g.sqrt(power);
        let melw = g.constant(self.mel_weights.clone());
        let mel = g.matmul(mag, melw)?;
        let mel = g.add_scalar(mel, MEL_FLOOR);
        Ok(g.log(mel))
    }

    /// Non-graph evaluation for constant inputs.
    pub fn analyze(&self, samples: &[f64]) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(samples.to_vec()));
        let out = self.apply(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        if samples < self.cfg.window {
            0
        } else {
            (samples - self.cfg.window) / self.cfg.hop + 1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mel_is_pure_and_self_l1_is_zero() {
        let cfg = MelConfig { window: 64, hop: 32, n_mels: 12, sample_rate: 8000 };
        let an = MelAnalyzer::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[512], 0.3, &mut rng);
        let a = an.analyze(x.data()).unwrap();
        let b = an.analyze(x.data()).unwrap();
        assert_eq!(a.data(), b.data());
        let l1: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| (p - q).abs())
            .sum();
        assert_eq!(l1, 0.0);
    }

    #[test]
    fn mel_gradient_check() {
        use crate::numerics::finite_difference_check;
        let cfg = MelConfig { window: 32, hop: 16, n_mels: 8, sample_rate: 8000 };
        let an = MelAnalyzer::new(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[96], 0.5, &mut rng);
        let report = finite_difference_check(&[x], 1e-6, |g, leaves| {
            let mel = an.apply(g, leaves[0])?;
            let sq = g.mul(mel, mel)?;
            Ok(g.mean_all(sq))
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn tone_concentrates_in_one_mel_band() {
        let cfg = MelConfig { window: 200, hop: 80, n_mels: 64, sample_rate: 8000 };
        let an = MelAnalyzer::new(cfg);
        let fs = 8000.0;
        let samples: Vec<f64> = (0..1600)
            .map(|t| 0.4 * (2.0 * std::f64::consts::PI * 800.0 * t as f64 / fs).sin())
            .collect();
        let mel = an.analyze(&samples).unwrap();
        // every frame peaks in the same band
        let first_peak = mel
            .row(0)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        for f in 1..mel.rows() {
            let peak = mel
                .row(f)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(peak, first_peak);
        }
    }
}

//! Frame-level log triangular-filterbank features.

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::synthlang::Waveform;

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub window_secs: f64,
    pub hop_secs: f64,
    pub n_bands: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_secs: 0.025,
            hop_secs: 0.010,
            n_bands: 40,
        }
    }
}

impl FeatureConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_secs * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_secs * sample_rate as f64).round() as usize
    }

    /// Bands whose centers align with the world's tone grid: one triangle
    /// center every `grid_hz` across (0, nyquist).
    pub fn grid_aligned(sample_rate: u32, grid_hz: f64) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let n_bands = (nyquist / grid_hz).round() as usize - 1;
        FeatureConfig {
            n_bands,
            ..FeatureConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameFeatures {
    /// [T_frames, n_bands]
    pub frames: Tensor,
    pub hop_secs: f64,
    pub sample_rate: u32,
}

impl FrameFeatures {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// Linear-frequency triangular filterbank over the power spectrum, stored
/// sparsely as (first_bin, weights) per band.
#[derive(Debug, Clone)]
pub struct Filterbank {
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

impl Filterbank {
    pub fn linear(n_bands: usize, n_fft: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let n_bins = n_fft / 2 + 1;
        let hz_per_bin = sample_rate as f64 / n_fft as f64;
        // n_bands triangles with edges at linspace(0, nyquist, n_bands + 2)
        let edge = |i: usize| nyquist * i as f64 / (n_bands + 1) as f64;
        let mut filters = Vec::with_capacity(n_bands);
        let mut centers = Vec::with_capacity(n_bands);
        for b in 0..n_bands {
            let (lo, mid, hi) = (edge(b), edge(b + 1), edge(b + 2));
            centers.push(mid);
            let first_bin = (lo / hz_per_bin).ceil() as usize;
            let last_bin = ((hi / hz_per_bin).floor() as usize).min(n_bins - 1);
            let mut weights = Vec::new();
            for bin in first_bin..=last_bin {
                let f = bin as f64 * hz_per_bin;
                let w = if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                weights.push(w.max(0.0));
            }
            filters.push((first_bin, weights));
        }
        Filterbank { filters, centers_hz: centers }
    }

    pub fn n_bands(&self) -> usize {
        self.filters.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Band index with maximum response to a pure tone at `freq`.
    pub fn band_of(&self, freq: f64) -> usize {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &c) in self.centers_hz.iter().enumerate() {
            let d = -(c - freq).abs();
            if d > best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (b, (first, weights)) in self.filters.iter().enumerate() {
            let mut acc = 0.0;
            for (w, p) in weights.iter().zip(&power[*first..]) {
                acc += w * p;
            }
            out[b] = acc.max(LOG_FLOOR).ln();
        }
    }
}

/// Reusable extractor: FFT plan, Hann window and filterbank are built once.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    sample_rate: u32,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    n_fft: usize,
    pub filterbank: Filterbank,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig, sample_rate: u32) -> Result<Self> {
        if cfg.n_bands == 0 {
            return Err(Error::InvalidArgument("n_bands must be >= 1".into()));
        }
        let win = cfg.window_samples(sample_rate);
        let hop = cfg.hop_samples(sample_rate);
        if win == 0 || hop == 0 || win < hop {
            return Err(Error::InvalidArgument(format!(
                "feature window {win} must be >= hop {hop} and both positive"
            )));
        }
        let n_fft = win.next_power_of_two();
        let window = (0..win)
            .map(|i| {
                let x = std::f64::consts::PI * 2.0 * i as f64 / win as f64;
                0.5 - 0.5 * x.cos()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        let filterbank = Filterbank::linear(cfg.n_bands, n_fft, sample_rate);
        Ok(FeatureExtractor {
            cfg,
            sample_rate,
            window,
            fft,
            n_fft,
            filterbank,
        })
    }

    pub fn config(&self) -> FeatureConfig {
        self.cfg
    }

    pub fn extract(&self, wave: &Waveform) -> Result<FrameFeatures> {
        if wave.sample_rate != self.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "extractor built for {} Hz, waveform is {} Hz",
                self.sample_rate, wave.sample_rate
            )));
        }
        let win = self.window.len();
        let hop = self.cfg.hop_samples(self.sample_rate);
        if wave.samples.len() < win {
            return Err(Error::InvalidArgument(format!(
                "waveform of {} samples shorter than one {win}-sample window",
                wave.samples.len()
            )));
        }
        let t_frames = (wave.samples.len() - win) / hop + 1;
        let d = self.cfg.n_bands;
        let samples = wave.to_f64();
        let mut data = vec![0.0; t_frames * d];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        for fi in 0..t_frames {
            let seg = &samples[fi * hop..fi * hop + win];
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < win {
                    Complex::new(seg[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (i, p) in power.iter_mut().enumerate() {
                *p = buf[i].norm_sqr();
            }
            self.filterbank.apply(&power, &mut data[fi * d..(fi + 1) * d]);
        }
        Ok(FrameFeatures {
            frames: Tensor::new(vec![t_frames, d], data)?,
            hop_secs: self.cfg.hop_secs,
            sample_rate: self.sample_rate,
        })
    }
}

/// One-shot feature extraction.
pub fn extract_features(wave: &Waveform, cfg: FeatureConfig) -> Result<FrameFeatures> {
    FeatureExtractor::new(cfg, wave.sample_rate)?.extract(wave)
}

/// Subtract each frame's mean from its bands. Loudness scales power in every
/// band equally, i.e. shifts a log-energy frame by a constant, so this makes
/// frames speaker-amplitude invariant before clustering.
pub fn mean_normalize(frames: &Tensor) -> Tensor {
    let (r, c) = (frames.rows(), frames.cols());
    let mut out = frames.data().to_vec();
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        for v in row.iter_mut() {
            *v -= mean;
        }
    }
    Tensor::new(frames.shape().to_vec(), out).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_gives_constant_floor_frames() {
        let wave = Waveform { samples: vec![0i16; 1600], sample_rate: 8000 };
        let f = extract_features(&wave, FeatureConfig::default()).unwrap();
        for &v in f.frames.data() {
            assert!((v - LOG_FLOOR.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_count_matches_formula() {
        let wave = Waveform { samples: vec![0i16; 2000], sample_rate: 8000 };
        let cfg = FeatureConfig::default();
        let f = extract_features(&wave, cfg).unwrap();
        let win = cfg.window_samples(8000);
        let hop = cfg.hop_samples(8000);
        assert_eq!(f.num_frames(), (2000 - win) / hop + 1);
    }

    #[test]
    fn too_short_waveform_errors() {
        let wave = Waveform { samples: vec![0i16; 100], sample_rate: 8000 };
        assert!(extract_features(&wave, FeatureConfig::default()).is_err());
    }

    #[test]
    fn pure_tone_peaks_in_expected_band() {
        use crate::synthlang::{synthesize_tones, SpeakerVoice};
        let voice = SpeakerVoice { amplitude: 1.0, vibrato_rate: 0.0, vibrato_depth: 0.0 };
        let wave = synthesize_tones(&[440.0], 8000, 0.5, voice);
        let cfg = FeatureConfig::default();
        let ex = FeatureExtractor::new(cfg, 8000).unwrap();
        let f = ex.extract(&wave).unwrap();
        let expect = ex.filterbank.band_of(440.0);
        let d = f.dim();
        for fi in 0..f.num_frames() {
            let row = f.frames.row(fi);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, expect, "frame {fi} of {d} bands");
        }
    }

    #[test]
    fn doubling_amplitude_shifts_log_energy_by_log4() {
        use crate::synthlang::{synthesize_tones, SpeakerVoice};
        let voice = SpeakerVoice { amplitude: 1.0, vibrato_rate: 0.0, vibrato_depth: 0.0 };
        let w1 = synthesize_tones(&[700.0], 8000, 0.3, voice);
        // double the samples exactly so band power scales by exactly 4
        let w2 = Waveform {
            samples: w1.samples.iter().map(|&s| s * 2).collect(),
            sample_rate: w1.sample_rate,
        };
        let cfg = FeatureConfig::default();
        let f1 = extract_features(&w1, cfg).unwrap();
        let f2 = extract_features(&w2, cfg).unwrap();
        let shift = 4.0f64.ln();
        let floor = LOG_FLOOR.ln();
        for (a, b) in f1.frames.data().iter().zip(f2.frames.data()) {
            // floor-clamped bands are exempt; everything else shifts by log 4
            if *a > floor + shift && *b > floor + shift {
                assert!((b - a - shift).abs() < 1e-9, "shift {}", b - a);
            }
        }
    }
}

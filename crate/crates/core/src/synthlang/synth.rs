//! Tone-sequence waveform synthesis.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::synthlang::{LangId, WorldSpec};
use crate::util::{mix_seed, splitmix64};

/// Mono PCM16 audio.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64 / 32768.0).collect()
    }

    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Self {
        let samples = samples
            .iter()
            .map(|&v| (v.clamp(-1.0, 1.0) * 32767.0).round() as i16)
            .collect();
        Waveform { samples, sample_rate }
    }
}

const CROSSFADE_SECS: f64 = 0.005;
const BASE_AMPLITUDE: f64 = 0.45;

/// Deterministic per-speaker voice parameters.
#[derive(Debug, Clone, Copy)]
pub struct SpeakerVoice {
    /// Amplitude factor in [0.8, 1.2].
    pub amplitude: f64,
    /// Vibrato rate in Hz, <= 3.
    pub vibrato_rate: f64,
    /// Vibrato depth as a fraction of f0, <= 0.01.
    pub vibrato_depth: f64,
}

impl SpeakerVoice {
    pub fn for_speaker(world_seed: u64, speaker: u32) -> Self {
        let unit = |salt: u64| {
            let h = splitmix64(mix_seed(&[world_seed, 0x5bea_c0de, speaker as u64, salt]));
            (h >> 11) as f64 / (1u64 << 53) as f64
        };
        SpeakerVoice {
            amplitude: 0.8 + 0.4 * unit(1),
            vibrato_rate: 3.0 * unit(2),
            vibrato_depth: 0.01 * unit(3),
        }
    }
}

/// Synthesize a sequence of tones, one per entry of `freqs`, each lasting
/// `symbol_duration` seconds, with raised-cosine cross-fades between
/// consecutive segments.
pub fn synthesize_tones(
    freqs: &[f64],
    sample_rate: u32,
    symbol_duration: f64,
    voice: SpeakerVoice,
) -> Waveform {
    let fs = sample_rate as f64;
    let total = (freqs.len() as f64 * symbol_duration * fs).round() as usize;
    if total == 0 {
        return Waveform { samples: Vec::new(), sample_rate };
    }
    let seg = symbol_duration * fs;
    let fade = (CROSSFADE_SECS * fs).round() as usize;
    let amp = BASE_AMPLITUDE * voice.amplitude;

    // Oscillator phases are referenced to absolute utterance time, so two
    // segments of the same frequency are exactly in phase and their
    // cross-fade is seamless.
    let tau = 2.0 * std::f64::consts::PI;
    let osc = |k: usize, t: usize| -> f64 {
        let f0 = freqs[k];
        let dt = t as f64 / fs;
        // phase of a tone whose instantaneous frequency is
        // f0 * (1 + depth * sin(tau * rate * t))
        let phase = if voice.vibrato_depth > 0.0 && voice.vibrato_rate > 1e-9 {
            tau * f0 * dt
                + (voice.vibrato_depth * f0 / voice.vibrato_rate)
                    * (1.0 - (tau * voice.vibrato_rate * dt).cos())
        } else {
            tau * f0 * dt
        };
        phase.sin()
    };

    let mut out = Vec::with_capacity(total);
    for t in 0..total {
        let k = ((t as f64 / seg) as usize).min(freqs.len() - 1);
        let boundary = ((k + 1) as f64 * seg).round() as usize;
        let sample = if k + 1 < freqs.len() && t + fade / 2 >= boundary {
            // inside the cross-fade zone straddling the boundary
            let x = (t + fade / 2 - boundary) as f64 / fade.max(1) as f64;
            let w_out = 0.5 * (1.0 + (std::f64::consts::PI * x).cos());
            w_out * osc(k, t) + (1.0 - w_out) * osc(k + 1, t)
        } else if k > 0 {
            let prev_boundary = (k as f64 * seg).round() as usize;
            if t < prev_boundary + fade / 2 {
                let x = (t + fade / 2 - prev_boundary) as f64 / fade.max(1) as f64;
                let w_out = 0.5 * (1.0 + (std::f64::consts::PI * x).cos());
                w_out * osc(k - 1, t) + (1.0 - w_out) * osc(k, t)
            } else {
                osc(k, t)
            }
        } else {
            osc(k, t)
        };
        out.push(amp * sample);
    }
    Waveform::from_f64(&out, sample_rate)
}

/// Synthesize an utterance of `lang` symbols with a speaker-specific voice.
pub fn synthesize_utterance(
    lang: LangId,
    symbols: &[u32],
    speaker: u32,
    world: &WorldSpec,
) -> Result<Waveform> {
    let freqs: Vec<f64> = symbols
        .iter()
        .map(|&s| world.frequency_of(lang, s))
        .collect::<Result<_>>()?;
    let voice = SpeakerVoice::for_speaker(world.seed, speaker);
    Ok(synthesize_tones(
        &freqs,
        world.sample_rate,
        world.symbol_duration,
        voice,
    ))
}

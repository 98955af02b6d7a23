//! Exact spectral transcriber for synthetic tone languages: the ASR stand-in
//! whose transcription of clean synthetic audio has zero errors.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::Result;
use crate::synthlang::{LangId, Waveform, WorldSpec};

/// RMS gate below which a window counts as silence, in full-scale units.
pub const ENERGY_GATE_RMS: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Transcription {
    pub symbols: Vec<u32>,
    /// Per emitted symbol: one minus the normalized distance between the
    /// observed peak and the matched inventory frequency.
    pub confidences: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OracleAsr {
    world: WorldSpec,
}

impl OracleAsr {
    pub fn new(world: WorldSpec) -> Self {
        OracleAsr { world }
    }

    pub fn world(&self) -> &WorldSpec {
        &self.world
    }

    pub fn transcribe(&self, wave: &Waveform, lang: LangId) -> Result<Transcription> {
        oracle_transcribe_detailed(wave, lang, &self.world)
    }
}

/// Segment audio into symbol-duration windows, gate on energy, take the
/// dominant spectral bin per window, and map it to the nearest inventory
/// frequency of `lang`.
pub fn oracle_transcribe(wave: &Waveform, lang: LangId, world: &WorldSpec) -> Result<Vec<u32>> {
    Ok(oracle_transcribe_detailed(wave, lang, world)?.symbols)
}

pub fn oracle_transcribe_detailed(
    wave: &Waveform,
    lang: LangId,
    world: &WorldSpec,
) -> Result<Transcription> {
    world.language(lang)?;
    let fs = wave.sample_rate as f64;
    let window = (world.symbol_duration * fs).round() as usize;
    let mut out = Transcription { symbols: Vec::new(), confidences: Vec::new() };
    if wave.samples.is_empty() || window == 0 {
        return Ok(out);
    }
    let num_windows = ((wave.samples.len() as f64 / window as f64).round() as usize).max(1);
    let samples = wave.to_f64();

    let fft = FftPlanner::new().plan_fft_forward(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    for w in 0..num_windows {
        let lo = w * window;
        let hi = ((w + 1) * window).min(samples.len());
        if hi <= lo {
            break;
        }
        let seg = &samples[lo..hi];
        let rms = (seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64).sqrt();
        if rms < ENERGY_GATE_RMS {
            continue;
        }
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if i < seg.len() { seg[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        let mut best = (0usize, 0.0f64);
        for (i, c) in buf.iter().enumerate().take(window / 2).skip(1) {
            let mag = c.norm_sqr();
            if mag > best.1 {
                best = (i, mag);
            }
        }
        let peak_hz = best.0 as f64 * fs / window as f64;
        let (symbol, dist) = world.nearest_symbol(lang, peak_hz)?;
        out.symbols.push(symbol);
        out.confidences
            .push((1.0 - dist / crate::synthlang::FREQ_GRID_HZ).max(0.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlang::{define_world, synthesize_utterance};

    #[test]
    fn round_trips_clean_synthetic_audio() {
        let world = define_world(77, 2, 2, 10, 8000, 0.08).unwrap();
        for lang in world.target_languages() {
            for (i, symbols) in [vec![0u32], vec![3, 7, 1, 1, 9], vec![5; 8]].iter().enumerate() {
                for speaker in 0..world.num_speakers {
                    let wave = synthesize_utterance(lang, symbols, speaker, &world).unwrap();
                    let got = oracle_transcribe(&wave, lang, &world).unwrap();
                    assert_eq!(&got, symbols, "case {i} lang {} spk {speaker}", lang.0);
                }
            }
        }
    }

    #[test]
    fn silence_transcribes_to_nothing() {
        let world = define_world(77, 1, 1, 4, 8000, 0.08).unwrap();
        let lang = world.target_languages()[0];
        let wave = Waveform { samples: vec![0i16; 4000], sample_rate: 8000 };
        assert!(oracle_transcribe(&wave, lang, &world).unwrap().is_empty());
    }

    #[test]
    fn source_language_also_transcribable() {
        let world = define_world(4, 2, 2, 12, 8000, 0.1).unwrap();
        let src = world.source_language;
        let symbols = vec![0u32, 11, 6, 3];
        let wave = synthesize_utterance(src, &symbols, 1, &world).unwrap();
        assert_eq!(oracle_transcribe(&wave, src, &world).unwrap(), symbols);
    }
}

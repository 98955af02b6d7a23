//! Reproducible synthetic multilingual world: families of toy tone languages
//! with exactly known translations, standing in for mined parallel speech.
//!
//! Every symbol of every language is a pure tone. Frequencies are assigned on
//! a fixed 100 Hz grid (one slot per symbol) so that a frame-rate-periodic
//! generator can express them exactly, with family bands kept disjoint and
//! within-family inventories partially shared.

mod corpus;
mod synth;
mod wav;

pub use corpus::{
    format_symbols, gen_corpus, parse_symbols, plan_corpus, read_manifest, realize_pair,
    sample_pair_spec, CorpusPlan, ManifestRow, PairSpec, ParallelPair,
};
pub use synth::{synthesize_tones, synthesize_utterance, SpeakerVoice, Waveform};
pub use wav::{read_wav, write_wav};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::mix_seed;

/// Spacing of the global tone-frequency grid. Equal to the default feature
/// frame rate (hop 10 ms), so every assigned tone is expressible by a
/// generator whose upsampling factor equals the hop.
pub const FREQ_GRID_HZ: f64 = 100.0;

/// Lowest assignable tone.
pub const FREQ_MIN_HZ: f64 = 300.0;

/// Keep-out margin below Nyquist.
pub const FREQ_TOP_MARGIN_HZ: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LangId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FamilyId(pub u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub id: LangId,
    pub name: String,
    /// `None` for the source language, which belongs to no family.
    pub family: Option<FamilyId>,
    /// symbol id -> fundamental frequency; index is the symbol id.
    pub inventory: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub id: FamilyId,
    pub name: String,
    pub members: Vec<LangId>,
    /// Frequency band (inclusive bounds) occupied by this family.
    pub band_hz: (f64, f64),
    /// Frequencies shared by every member language.
    pub shared_freqs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub sample_rate: u32,
    pub symbol_duration: f64,
    pub symbols_per_lang: usize,
    pub num_speakers: u32,
    pub source_language: LangId,
    pub families: Vec<FamilySpec>,
    pub languages: Vec<LanguageSpec>,
}

/// Knobs beyond the positional `define_world` arguments.
#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub seed: u64,
    pub num_families: usize,
    pub langs_per_family: usize,
    pub symbols_per_lang: usize,
    pub sample_rate: u32,
    pub symbol_duration: f64,
    /// Fraction of each language's inventory shared with its family
    /// siblings; `None` picks the least sharing that fits the spectrum.
    pub shared_fraction: Option<f64>,
    pub num_speakers: u32,
}

impl WorldConfig {
    pub fn new(
        seed: u64,
        num_families: usize,
        langs_per_family: usize,
        symbols_per_lang: usize,
        sample_rate: u32,
        symbol_duration: f64,
    ) -> Self {
        WorldConfig {
            seed,
            num_families,
            langs_per_family,
            symbols_per_lang,
            sample_rate,
            symbol_duration,
            shared_fraction: None,
            num_speakers: 4,
        }
    }

    pub fn shared_fraction(mut self, f: f64) -> Self {
        self.shared_fraction = Some(f);
        self
    }

    pub fn num_speakers(mut self, n: u32) -> Self {
        self.num_speakers = n;
        self
    }

    pub fn build(&self) -> Result<WorldSpec> {
        build_world(self)
    }
}

/// Deterministic world for a given seed; frequency bands disjoint across the
/// source language and every family.
pub fn define_world(
    seed: u64,
    num_families: usize,
    langs_per_family: usize,
    symbols_per_lang: usize,
    sample_rate: u32,
    symbol_duration: f64,
) -> Result<WorldSpec> {
    WorldConfig::new(
        seed,
        num_families,
        langs_per_family,
        symbols_per_lang,
        sample_rate,
        symbol_duration,
    )
    .build()
}

fn build_world(cfg: &WorldConfig) -> Result<WorldSpec> {
    if cfg.num_families < 1 || cfg.langs_per_family < 1 || cfg.symbols_per_lang < 1 {
        return Err(Error::InvalidArgument(
            "define_world: all counts must be >= 1".into(),
        ));
    }
    if cfg.sample_rate < 8000 {
        return Err(Error::InvalidArgument(format!(
            "define_world: sample_rate {} < 8000",
            cfg.sample_rate
        )));
    }
    if cfg.symbol_duration < 0.04 {
        return Err(Error::InvalidArgument(format!(
            "define_world: symbol_duration {} < 0.04 s",
            cfg.symbol_duration
        )));
    }
    if let Some(f) = cfg.shared_fraction {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidArgument(
                "define_world: shared_fraction must be in [0,1]".into(),
            ));
        }
    }
    if cfg.num_speakers < 1 {
        return Err(Error::InvalidArgument(
            "define_world: num_speakers must be >= 1".into(),
        ));
    }

    // Preferred layout: slots on the vocoder-expressible grid (multiples of
    // the frame rate) with the source language in its own band. Fall back to
    // the minimum legal within-family spacing (2 analyzer bins), then to
    // higher sharing, then to interleaving source tones at half-slot offsets
    // inside the family span: source tones are never clustered, so they only
    // need to stay distinct, not band-isolated.
    let fractions: Vec<f64> = match cfg.shared_fraction {
        Some(f) => vec![f],
        None => vec![0.7, 0.85, 1.0],
    };
    let spacings = [(FREQ_GRID_HZ, FREQ_MIN_HZ), (80.0, 240.0)];
    let mut min_requested = usize::MAX;
    let mut max_available = 0usize;
    for &fraction in &fractions {
        for &(spacing, fmin) in &spacings {
            match try_layout(cfg, fraction, spacing, fmin) {
                LayoutOutcome::Fits(world) => return Ok(world),
                LayoutOutcome::TooBig { requested, available } => {
                    min_requested = min_requested.min(requested);
                    max_available = max_available.max(available);
                }
            }
        }
    }
    Err(Error::Capacity {
        requested: min_requested,
        available: max_available,
        sample_rate: cfg.sample_rate,
    })
}

enum LayoutOutcome {
    Fits(WorldSpec),
    TooBig { requested: usize, available: usize },
}

fn try_layout(cfg: &WorldConfig, fraction: f64, spacing: f64, fmin: f64) -> LayoutOutcome {
    let s = cfg.symbols_per_lang;
    let shared = ((s as f64) * fraction).round() as usize;
    let shared = if cfg.langs_per_family > 1 && fraction < 1.0 {
        shared.min(s.saturating_sub(1))
    } else {
        shared.min(s)
    };
    let unique = s - shared;
    let per_family_slots = shared + cfg.langs_per_family * unique;
    let family_total = cfg.num_families * per_family_slots + (cfg.num_families - 1);

    let nyquist = cfg.sample_rate as f64 / 2.0;
    let top = nyquist - FREQ_TOP_MARGIN_HZ;
    let available = if top < fmin {
        0
    } else {
        ((top - fmin) / spacing).floor() as usize + 1
    };

    let own_band = family_total + 1 + s <= available;
    let interleaved = family_total <= available && s <= family_total;
    if !own_band && !interleaved {
        return LayoutOutcome::TooBig {
            requested: family_total + 1 + s,
            available,
        };
    }

    let slot_freq = |slot: usize| fmin + slot as f64 * spacing;
    let mut cursor = 0usize;
    let mut languages = Vec::new();
    let mut families = Vec::new();

    let mut next_lang = 1u32;
    for f in 0..cfg.num_families {
        let band_lo = slot_freq(cursor);
        let shared_freqs: Vec<f64> = (0..shared).map(|i| slot_freq(cursor + i)).collect();
        cursor += shared;
        let mut members = Vec::new();
        for l in 0..cfg.langs_per_family {
            let unique_freqs: Vec<f64> = (0..unique).map(|i| slot_freq(cursor + i)).collect();
            cursor += unique;
            let mut inv: Vec<f64> = shared_freqs.iter().chain(&unique_freqs).copied().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                cfg.seed,
                0x1a6,
                f as u64,
                l as u64,
            ]));
            inv.shuffle(&mut rng);
            let id = LangId(next_lang);
            next_lang += 1;
            members.push(id);
            languages.push(LanguageSpec {
                id,
                name: format!("f{f}l{l}"),
                family: Some(FamilyId(f as u32)),
                inventory: inv,
            });
        }
        let band_hi = slot_freq(cursor - 1);
        cursor += 1; // guard slot
        families.push(FamilySpec {
            id: FamilyId(f as u32),
            name: format!("fam{f}"),
            members,
            band_hz: (band_lo, band_hi),
            shared_freqs,
        });
    }

    let mut src_freqs: Vec<f64> = if own_band {
        (0..s).map(|i| slot_freq(cursor + i)).collect()
    } else {
        (0..s).map(|i| slot_freq(i) + spacing / 2.0).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x5c0]));
    src_freqs.shuffle(&mut rng);
    languages.insert(
        0,
        LanguageSpec {
            id: LangId(0),
            name: "src".into(),
            family: None,
            inventory: src_freqs,
        },
    );

    LayoutOutcome::Fits(WorldSpec {
        seed: cfg.seed,
        sample_rate: cfg.sample_rate,
        symbol_duration: cfg.symbol_duration,
        symbols_per_lang: s,
        num_speakers: cfg.num_speakers,
        source_language: LangId(0),
        families,
        languages,
    })
}

impl WorldSpec {
    pub fn language(&self, id: LangId) -> Result<&LanguageSpec> {
        self.languages
            .get(id.0 as usize)
            .filter(|l| l.id == id)
            .ok_or_else(|| Error::Vocabulary(format!("unknown language id {}", id.0)))
    }

    pub fn language_by_name(&self, name: &str) -> Result<&LanguageSpec> {
        self.languages
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Vocabulary(format!("unknown language {name}")))
    }

    pub fn family(&self, id: FamilyId) -> Result<&FamilySpec> {
        self.families
            .get(id.0 as usize)
            .filter(|f| f.id == id)
            .ok_or_else(|| Error::Vocabulary(format!("unknown family id {}", id.0)))
    }

    /// All non-source languages, in id order.
    pub fn target_languages(&self) -> Vec<LangId> {
        self.languages
            .iter()
            .filter(|l| l.family.is_some())
            .map(|l| l.id)
            .collect()
    }

    pub fn frequency_of(&self, lang: LangId, symbol: u32) -> Result<f64> {
        let spec = self.language(lang)?;
        spec.inventory
            .get(symbol as usize)
            .copied()
            .ok_or_else(|| {
                Error::Vocabulary(format!(
                    "symbol {symbol} outside inventory of {} ({} symbols)",
                    spec.name,
                    spec.inventory.len()
                ))
            })
    }

    /// Symbol whose frequency is nearest to `freq` in `lang`'s inventory.
    pub fn nearest_symbol(&self, lang: LangId, freq: f64) -> Result<(u32, f64)> {
        let spec = self.language(lang)?;
        let mut best = (0u32, f64::INFINITY);
        for (i, &f) in spec.inventory.iter().enumerate() {
            let d = (f - freq).abs();
            if d < best.1 {
                best = (i as u32, d);
            }
        }
        Ok(best)
    }

    /// The per-symbol lexical bijection source -> `target_lang`.
    pub fn lexical_map(&self, target_lang: LangId) -> Result<Vec<u32>> {
        self.language(target_lang)?;
        let s = self.symbols_per_lang;
        let mut map: Vec<u32> = (0..s as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            self.seed,
            0x1e8,
            target_lang.0 as u64,
        ]));
        map.shuffle(&mut rng);
        Ok(map)
    }
}

/// Ground-truth translation: per-symbol bijection into the target inventory,
/// then each adjacent pair at even offsets swapped.
pub fn translate_symbols(
    source_symbols: &[u32],
    target_lang: LangId,
    world: &WorldSpec,
) -> Result<Vec<u32>> {
    let map = world.lexical_map(target_lang)?;
    let s = world.symbols_per_lang as u32;
    let mut out = Vec::with_capacity(source_symbols.len());
    for &sym in source_symbols {
        if sym >= s {
            return Err(Error::Vocabulary(format!(
                "source symbol {sym} outside inventory of {} symbols",
                s
            )));
        }
        out.push(map[sym as usize]);
    }
    swap_adjacent(&mut out);
    Ok(out)
}

/// Inverse of `translate_symbols`.
pub fn untranslate_symbols(
    target_symbols: &[u32],
    target_lang: LangId,
    world: &WorldSpec,
) -> Result<Vec<u32>> {
    let map = world.lexical_map(target_lang)?;
    let mut inverse = vec![0u32; map.len()];
    for (src, &dst) in map.iter().enumerate() {
        inverse[dst as usize] = src as u32;
    }
    let mut work = target_symbols.to_vec();
    swap_adjacent(&mut work);
    work.iter()
        .map(|&t| {
            inverse
                .get(t as usize)
                .copied()
                .ok_or_else(|| Error::Vocabulary(format!("target symbol {t} out of range")))
        })
        .collect()
}

fn swap_adjacent(seq: &mut [u32]) {
    let mut i = 0;
    while i + 1 < seq.len() {
        seq.swap(i, i + 1);
        i += 2;
    }
}

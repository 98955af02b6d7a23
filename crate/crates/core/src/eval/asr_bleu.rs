//! Full-pipeline translation quality: masked decode -> vocoder -> oracle
//! transcription -> corpus BLEU per direction.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::bleu::{bleu, BleuReport};
use crate::eval::oracle::oracle_transcribe;
use crate::pipeline::DeskWorld;
use crate::s2mu::{masked_decode, DecodeOptions, S2MUModel};
use crate::synthlang::{realize_pair, FamilyId, LangId, PairSpec};
use crate::vocoder::VocoderBundle;

#[derive(Debug, Clone, Serialize)]
pub struct DirectionScore {
    pub lang: LangId,
    pub lang_name: String,
    pub score: f64,
    pub n_examples: usize,
    pub precisions: [f64; 4],
}

#[derive(Debug, Clone, Serialize)]
pub struct AsrBleuTable {
    pub directions: Vec<DirectionScore>,
    pub macro_avg: f64,
    /// Directions omitted for lack of test pairs.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct AsrBleuOptions {
    pub decode: DecodeOptions,
    /// Speaker id used for synthesis at inference.
    pub speaker: u32,
}

impl Default for AsrBleuOptions {
    fn default() -> Self {
        AsrBleuOptions { decode: DecodeOptions::default(), speaker: 0 }
    }
}

/// ASR-BLEU of the full pipeline. Every direction needs its family's
/// vocoder; missing bundles are a configuration error.
pub fn asr_bleu(
    desk: &DeskWorld,
    model: &S2MUModel,
    vocoders: &BTreeMap<FamilyId, VocoderBundle>,
    testset: &[PairSpec],
    opts: AsrBleuOptions,
) -> Result<AsrBleuTable> {
    let mut per_direction: BTreeMap<LangId, Vec<(Vec<u32>, Vec<u32>)>> = BTreeMap::new();
    for spec in testset {
        let family = desk
            .world
            .language(spec.target_lang)?
            .family
            .ok_or_else(|| Error::Vocabulary("testset targets the source language".into()))?;
        let vocoder = vocoders.get(&family).ok_or_else(|| {
            Error::Config(format!(
                "no vocoder for family {} required by direction {}",
                family.0,
                desk.world.language(spec.target_lang).map(|l| l.name.clone()).unwrap_or_default()
            ))
        })?;
        let pair = realize_pair(&desk.world, spec)?;
        let features = desk.features_of(&pair.source_wave)?;
        let decoded = masked_decode(model, &features, spec.target_lang, opts.decode)?;
        let raw = desk.vocab.detag_units(family, &decoded.units.units)?;
        let hyp_symbols = if raw.is_empty() {
            Vec::new()
        } else {
            let wave = vocoder.resynthesize(&raw, opts.speaker, spec.target_lang)?;
            oracle_transcribe(&wave, spec.target_lang, &desk.world)?
        };
        per_direction
            .entry(spec.target_lang)
            .or_default()
            .push((hyp_symbols, spec.target_text.clone()));
    }
    table_from_pairs(desk, per_direction)
}

/// Upper-bound variant: gold target units straight into the vocoder,
/// skipping the translation model.
pub fn gold_unit_bleu(
    desk: &DeskWorld,
    vocoders: &BTreeMap<FamilyId, VocoderBundle>,
    testset: &[PairSpec],
    opts: AsrBleuOptions,
) -> Result<AsrBleuTable> {
    let mut per_direction: BTreeMap<LangId, Vec<(Vec<u32>, Vec<u32>)>> = BTreeMap::new();
    for spec in testset {
        let family = desk
            .world
            .language(spec.target_lang)?
            .family
            .ok_or_else(|| Error::Vocabulary("testset targets the source language".into()))?;
        let vocoder = vocoders
            .get(&family)
            .ok_or_else(|| Error::Config(format!("no vocoder for family {}", family.0)))?;
        let units = desk.target_units(spec)?;
        let wave = vocoder.resynthesize(&units.units, opts.speaker, spec.target_lang)?;
        let hyp = oracle_transcribe(&wave, spec.target_lang, &desk.world)?;
        per_direction
            .entry(spec.target_lang)
            .or_default()
            .push((hyp, spec.target_text.clone()));
    }
    table_from_pairs(desk, per_direction)
}

fn table_from_pairs(
    desk: &DeskWorld,
    per_direction: BTreeMap<LangId, Vec<(Vec<u32>, Vec<u32>)>>,
) -> Result<AsrBleuTable> {
    let mut directions = Vec::new();
    let mut skipped = Vec::new();
    for lang in desk.world.target_languages() {
        match per_direction.get(&lang) {
            Some(pairs) if !pairs.is_empty() => {
                let report: BleuReport = bleu(pairs)?;
                directions.push(DirectionScore {
                    lang,
                    lang_name: desk.world.language(lang)?.name.clone(),
                    score: report.score,
                    n_examples: pairs.len(),
                    precisions: report.precisions,
                });
            }
            _ => skipped.push(desk.world.language(lang)?.name.clone()),
        }
    }
    let macro_avg = if directions.is_empty() {
        0.0
    } else {
        directions.iter().map(|d| d.score).sum::<f64>() / directions.len() as f64
    };
    Ok(AsrBleuTable { directions, macro_avg, skipped })
}

/// Symbol recovery of a vocoder on gold units: 1 - WER against the
/// reference transcripts.
pub fn symbol_recovery(
    desk: &DeskWorld,
    vocoder: &VocoderBundle,
    testset: &[PairSpec],
    speaker: u32,
) -> Result<f64> {
    let mut errors = 0usize;
    let mut total = 0usize;
    for spec in testset {
        let units = desk.target_units(spec)?;
        let wave = vocoder.resynthesize(&units.units, speaker, spec.target_lang)?;
        let hyp = oracle_transcribe(&wave, spec.target_lang, &desk.world)?;
        let report = crate::eval::wer(&hyp, &spec.target_text);
        errors += report.substitutions + report.insertions + report.deletions;
        total += spec.target_text.len();
    }
    Ok(1.0 - errors as f64 / total.max(1) as f64)
}

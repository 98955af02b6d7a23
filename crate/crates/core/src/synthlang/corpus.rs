//! Parallel-pair corpus planning, materialization, and on-disk layout.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthlang::{
    synthesize_utterance, translate_symbols, wav::write_wav, LangId, Waveform, WorldSpec,
};
use crate::util::mix_seed;

/// Everything about a pair except the audio.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub source_text: Vec<u32>,
    pub target_text: Vec<u32>,
    pub target_lang: LangId,
    pub speaker: u32,
}

/// A fully materialized pair: aligned source and target waveforms plus
/// transcripts.
#[derive(Debug, Clone)]
pub struct ParallelPair {
    pub source_wave: Waveform,
    pub target_wave: Waveform,
    pub spec: PairSpec,
}

/// Deterministic corpus plan; audio is synthesized on demand.
#[derive(Debug, Clone)]
pub struct CorpusPlan {
    pub pairs: Vec<PairSpec>,
}

/// Sample one pair for `target_lang`; fully determined by `(world, seed)`.
pub fn sample_pair_spec(
    world: &WorldSpec,
    target_lang: LangId,
    seed: u64,
    length_range: (usize, usize),
) -> Result<PairSpec> {
    let (lo, hi) = length_range;
    if lo < 1 || hi > 64 || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "length_range ({lo},{hi}) outside [1,64]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(lo..=hi);
    let s = world.symbols_per_lang as u32;
    let source_text: Vec<u32> = (0..len).map(|_| rng.random_range(0..s)).collect();
    let target_text = translate_symbols(&source_text, target_lang, world)?;
    let speaker = rng.random_range(0..world.num_speakers);
    Ok(PairSpec {
        source_text,
        target_text,
        target_lang,
        speaker,
    })
}

/// Plan `count` pairs for each listed direction, in direction order.
pub fn plan_corpus(
    world: &WorldSpec,
    per_direction: &[(LangId, usize)],
    seed: u64,
    length_range: (usize, usize),
) -> Result<CorpusPlan> {
    let mut pairs = Vec::new();
    for &(lang, count) in per_direction {
        world.language(lang)?;
        for idx in 0..count {
            let pair_seed = mix_seed(&[seed, 0xc0b, lang.0 as u64, idx as u64]);
            pairs.push(sample_pair_spec(world, lang, pair_seed, length_range)?);
        }
    }
    Ok(CorpusPlan { pairs })
}

/// Synthesize both sides of a planned pair.
pub fn realize_pair(world: &WorldSpec, spec: &PairSpec) -> Result<ParallelPair> {
    let source_wave =
        synthesize_utterance(world.source_language, &spec.source_text, spec.speaker, world)?;
    let target_wave =
        synthesize_utterance(spec.target_lang, &spec.target_text, spec.speaker, world)?;
    Ok(ParallelPair {
        source_wave,
        target_wave,
        spec: spec.clone(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRow {
    pub src_audio: String,
    pub tgt_audio: String,
    pub src_text: String,
    pub tgt_text: String,
    pub tgt_lang: String,
    pub speaker: u32,
}

pub fn format_symbols(symbols: &[u32]) -> String {
    symbols
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_symbols(text: &str) -> Result<Vec<u32>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<u32>()
                .map_err(|_| Error::InvalidArgument(format!("bad symbol token {t:?}")))
        })
        .collect()
}

/// Generate a corpus on disk: waveforms under `audio/`, one JSON manifest row
/// per pair in `manifest.jsonl`. `scale` shrinks individual directions to
/// simulate low-resource conditions.
pub fn gen_corpus(
    world: &WorldSpec,
    pairs_per_direction: usize,
    seed: u64,
    length_range: (usize, usize),
    scale: Option<&BTreeMap<LangId, f64>>,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>> {
    let per_direction: Vec<(LangId, usize)> = world
        .target_languages()
        .into_iter()
        .map(|lang| {
            let s = scale.and_then(|m| m.get(&lang)).copied().unwrap_or(1.0);
            (lang, ((pairs_per_direction as f64) * s).round() as usize)
        })
        .collect();
    let plan = plan_corpus(world, &per_direction, seed, length_range)?;

    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(audio_dir.display().to_string(), e))?;
    let manifest_path = out_dir.join("manifest.jsonl");
    let file = fs::File::create(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);

    let mut rows = Vec::with_capacity(plan.pairs.len());
    let mut per_lang_counter: BTreeMap<LangId, usize> = BTreeMap::new();
    for spec in &plan.pairs {
        let idx = per_lang_counter.entry(spec.target_lang).or_insert(0);
        let lang_name = world.language(spec.target_lang)?.name.clone();
        let stem = format!("{lang_name}_{idx:06}");
        *idx += 1;

        let pair = realize_pair(world, spec)?;
        let src_rel = format!("audio/{stem}_src.wav");
        let tgt_rel = format!("audio/{stem}_tgt.wav");
        write_wav(&out_dir.join(&src_rel), &pair.source_wave)?;
        write_wav(&out_dir.join(&tgt_rel), &pair.target_wave)?;

        let row = ManifestRow {
            src_audio: src_rel,
            tgt_audio: tgt_rel,
            src_text: format_symbols(&spec.source_text),
            tgt_text: format_symbols(&spec.target_text),
            tgt_lang: lang_name,
            speaker: spec.speaker,
        };
        let line = serde_json::to_string(&row)
            .map_err(|e| Error::InvalidArgument(format!("manifest encode: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        rows.push(row);
    }
    out.flush()
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidArgument(format!("manifest parse: {e}")))?;
        rows.push(row);
    }
    Ok(rows)
}

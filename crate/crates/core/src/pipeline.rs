//! End-to-end orchestration: prepare a world's quantizers and vocabulary,
//! build training datasets, and drive model training.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::discretize::{
    dedup, kmeans_train, mean_normalize, quantize, FeatureConfig, FeatureExtractor, KMeansModel,
    RunLengthUnits,
};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::s2mu::{BatchExample, LossReport, MaskSet, S2MUTrainer};
use crate::synthlang::{
    plan_corpus, realize_pair, sample_pair_spec, synthesize_utterance, FamilyId, LangId, PairSpec,
    Waveform, WorldSpec,
};
use crate::util::mix_seed;
use crate::vocab::ExtendedVocabulary;
use crate::vocoder::{VocoderConfig, VocoderItem, VocoderTrainer};

/// Default ratio of k-means clusters to family inventory size.
pub const K_MULTIPLIER: f64 = 1.5;

/// Desk-scale vocoder learning rate. The full-scale default (2e-4) is kept
/// on `VocoderConfig`; minute-scale step budgets need a faster rate.
pub const DESK_VOCODER_LR: f64 = 2e-3;

/// A prepared world: feature extractor, per-family quantizers, extended
/// vocabulary and masks.
pub struct DeskWorld {
    pub world: WorldSpec,
    pub extractor: FeatureExtractor,
    pub kmeans: BTreeMap<FamilyId, KMeansModel>,
    pub vocab: ExtendedVocabulary,
    pub masks: MaskSet,
}

#[derive(Debug, Clone, Copy)]
pub struct PrepareOptions {
    pub kmeans_seed: u64,
    /// Utterances per language used to fit each family's k-means.
    pub kmeans_pairs_per_lang: usize,
    pub kmeans_max_iters: usize,
    /// Cap on pooled frames per family (seeded subsample above it).
    pub kmeans_max_frames: usize,
    /// Seeded restarts; the lowest-inertia run wins. Single-init Lloyd can
    /// leave two adjacent tone clouds sharing a centroid.
    pub kmeans_restarts: usize,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            kmeans_seed: 13,
            kmeans_pairs_per_lang: 60,
            kmeans_max_iters: 40,
            kmeans_max_frames: 40_000,
            kmeans_restarts: 6,
        }
    }
}

impl DeskWorld {
    /// Grid-aligned features for the world's sample rate.
    pub fn default_feature_config(world: &WorldSpec) -> FeatureConfig {
        FeatureConfig::grid_aligned(world.sample_rate, crate::synthlang::FREQ_GRID_HZ)
    }

    pub fn prepare(world: WorldSpec, feature_cfg: FeatureConfig, opts: PrepareOptions) -> Result<Self> {
        let extractor = FeatureExtractor::new(feature_cfg, world.sample_rate)?;
        let mut kmeans = BTreeMap::new();
        let mut k_per_family = Vec::new();
        for family in &world.families {
            let k = family_k(&world, family.id);
            k_per_family.push((family.id, k));

            // pooled member-language audio, quantizer-fitting split
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for &lang in &family.members {
                for i in 0..opts.kmeans_pairs_per_lang {
                    let seed = mix_seed(&[world.seed, 0x5a3, lang.0 as u64, i as u64]);
                    let spec = sample_pair_spec(&world, lang, seed, (3, 10))?;
                    let wave =
                        synthesize_utterance(lang, &spec.target_text, spec.speaker, &world)?;
                    let feats = mean_normalize(&extractor.extract(&wave)?.frames);
                    for f in 0..feats.rows() {
                        rows.push(feats.row(f).to_vec());
                    }
                }
            }
            if rows.len() > opts.kmeans_max_frames {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    opts.kmeans_seed,
                    family.id.0 as u64,
                ]));
                rows.shuffle(&mut rng);
                rows.truncate(opts.kmeans_max_frames);
            }
            let features = Tensor::from_rows(&rows)?;
            let mut best: Option<crate::discretize::KMeansModel> = None;
            for restart in 0..opts.kmeans_restarts.max(1) {
                let training = kmeans_train(
                    &features,
                    k,
                    family.id,
                    mix_seed(&[opts.kmeans_seed, 0x4b, family.id.0 as u64, restart as u64]),
                    opts.kmeans_max_iters,
                    1e-7,
                )?;
                if best.as_ref().map_or(true, |b| training.model.inertia < b.inertia) {
                    best = Some(training.model);
                }
            }
            kmeans.insert(family.id, best.expect("at least one restart"));
        }
        let vocab = ExtendedVocabulary::for_world(&world, &k_per_family)?;
        let masks = MaskSet::for_vocab(&vocab);
        Ok(DeskWorld { world, extractor, kmeans, vocab, masks })
    }

    pub fn features_of(&self, wave: &Waveform) -> Result<Tensor> {
        Ok(self.extractor.extract(wave)?.frames)
    }

    /// Quantize + dedup a waveform with its family's model.
    pub fn units_of(&self, wave: &Waveform, family: FamilyId, lang: LangId) -> Result<RunLengthUnits> {
        let model = self
            .kmeans
            .get(&family)
            .ok_or_else(|| Error::Config(format!("no k-means model for family {}", family.0)))?;
        let feats = mean_normalize(&self.features_of(wave)?);
        let frame_units = quantize(&feats, model)?;
        Ok(dedup(&frame_units, family, lang))
    }

    /// Target-side units for a planned pair.
    pub fn target_units(&self, spec: &PairSpec) -> Result<RunLengthUnits> {
        let family = self
            .world
            .language(spec.target_lang)?
            .family
            .ok_or_else(|| Error::Vocabulary("target language has no family".into()))?;
        let wave =
            synthesize_utterance(spec.target_lang, &spec.target_text, spec.speaker, &self.world)?;
        self.units_of(&wave, family, spec.target_lang)
    }

    /// Source features + encoded target units as a training example.
    pub fn s2mu_example(&self, spec: &PairSpec, id: &str) -> Result<BatchExample> {
        let pair = realize_pair(&self.world, spec)?;
        let features = self.features_of(&pair.source_wave)?;
        let family = self
            .world
            .language(spec.target_lang)?
            .family
            .ok_or_else(|| Error::Vocabulary("target language has no family".into()))?;
        let units = self.units_of(&pair.target_wave, family, spec.target_lang)?;
        let tagged = self.vocab.tag_units(&units)?;
        Ok(BatchExample {
            id: id.to_string(),
            features,
            target: self.vocab.encode_target(spec.target_lang, &tagged)?,
            lang: spec.target_lang,
        })
    }

    /// Materialize a whole plan into training examples.
    pub fn s2mu_dataset(&self, specs: &[PairSpec]) -> Result<Vec<BatchExample>> {
        specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let name = format!("{}#{i}", self.world.language(s.target_lang)?.name);
                self.s2mu_example(s, &name)
            })
            .collect()
    }

    /// Vocoder training items (units with gold durations + aligned audio)
    /// for one family, from the target sides of a plan.
    pub fn vocoder_items(&self, family: FamilyId, specs: &[PairSpec]) -> Result<Vec<VocoderItem>> {
        let fam = self.world.family(family)?;
        let mut items = Vec::new();
        for spec in specs {
            let lang_spec = self.world.language(spec.target_lang)?;
            if lang_spec.family != Some(family) {
                continue;
            }
            let wave = synthesize_utterance(
                spec.target_lang,
                &spec.target_text,
                spec.speaker,
                &self.world,
            )?;
            let units = self.units_of(&wave, family, spec.target_lang)?;
            let lang_index = fam
                .members
                .iter()
                .position(|&l| l == spec.target_lang)
                .expect("member list covers the family");
            items.push(VocoderItem {
                units: units.units,
                durations: units.durations,
                speaker: spec.speaker,
                lang_index,
                wave,
            });
        }
        Ok(items)
    }

    /// Desk-scale vocoder configuration for one family.
    pub fn vocoder_config(&self, family: FamilyId, seed: u64) -> Result<VocoderConfig> {
        let fam = self.world.family(family)?;
        let k = self
            .kmeans
            .get(&family)
            .map(|m| m.k)
            .unwrap_or_else(|| family_k(&self.world, family));
        let hop = self.extractor.config().hop_samples(self.world.sample_rate);
        let mut cfg = VocoderConfig::desk_default(
            family,
            fam.members.clone(),
            k,
            self.world.num_speakers as usize,
            self.world.sample_rate,
            hop,
            seed,
        );
        cfg.learning_rate = DESK_VOCODER_LR;
        Ok(cfg)
    }
}

/// k-means size for a family: `K_MULTIPLIER` times its distinct-frequency
/// inventory.
pub fn family_k(world: &WorldSpec, family: FamilyId) -> usize {
    let fam = world.family(family).expect("family exists");
    let mut freqs: Vec<u64> = fam
        .members
        .iter()
        .flat_map(|&m| {
            world
                .language(m)
                .expect("member exists")
                .inventory
                .iter()
                .map(|f| f.to_bits())
        })
        .collect();
    freqs.sort_unstable();
    freqs.dedup();
    ((freqs.len() as f64) * K_MULTIPLIER).ceil() as usize
}

/// Seeded mini-batch sampler: shuffled epochs over the dataset.
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        BatchSampler { order, cursor: 0, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            if self.cursor >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct S2MUTrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub sampler_seed: u64,
    /// Report cadence for the progress callback.
    pub report_every: u64,
}

/// Drive S2MU training over a dataset; returns the per-report loss history.
pub fn run_s2mu_training(
    trainer: &mut S2MUTrainer,
    dataset: &[BatchExample],
    masks: &MaskSet,
    opts: S2MUTrainOptions,
    mut progress: impl FnMut(u64, &LossReport),
) -> Result<Vec<LossReport>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    let mut sampler = BatchSampler::new(dataset.len(), opts.sampler_seed);
    let mut history = Vec::new();
    for step in 0..opts.steps {
        let idx = sampler.next_batch(opts.batch_size.min(dataset.len()));
        let batch: Vec<BatchExample> = idx.iter().map(|&i| dataset[i].clone()).collect();
        let report = trainer.train_step(&batch, masks)?;
        if step % opts.report_every.max(1) == 0 || step + 1 == opts.steps {
            progress(step, &report);
            history.push(report);
        }
    }
    Ok(history)
}

#[derive(Debug, Clone, Copy)]
pub struct VocoderTrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub report_every: u64,
}

/// Drive alternating auxiliary/generator vocoder training.
pub fn run_vocoder_training(
    trainer: &mut VocoderTrainer,
    items: &[VocoderItem],
    opts: VocoderTrainOptions,
    mut progress: impl FnMut(u64, f64),
) -> Result<()> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty vocoder dataset".into()));
    }
    let mut sampler = BatchSampler::new(items.len(), mix_seed(&[trainer.bundle.cfg.seed, 0xba7]));
    for step in 0..opts.steps {
        let idx = sampler.next_batch(opts.batch_size.min(items.len()));
        let batch: Vec<&VocoderItem> = idx.iter().map(|&i| &items[i]).collect();
        let (_, gen) = trainer.train_step(&batch)?;
        if step % opts.report_every.max(1) == 0 {
            progress(step, gen.mel_l1);
        }
    }
    Ok(())
}

/// Uniform per-direction corpus plan.
pub fn uniform_plan(
    world: &WorldSpec,
    pairs_per_direction: usize,
    seed: u64,
    length_range: (usize, usize),
) -> Result<Vec<PairSpec>> {
    let per: Vec<(LangId, usize)> = world
        .target_languages()
        .into_iter()
        .map(|l| (l, pairs_per_direction))
        .collect();
    Ok(plan_corpus(world, &per, seed, length_range)?.pairs)
}

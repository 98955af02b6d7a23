//! Multilingual unit-to-waveform vocoder: generator with unit/speaker/
//! language embeddings, duration predictor, multi-period and multi-scale
//! discriminators, and a language-identification classifier whose loss on
//! generated audio is the generator's auxiliary objective.

mod discriminator;
mod generator;
mod lid;
mod mel;
mod train;

pub use discriminator::{DiscriminatorSet, PeriodDiscriminator, ScaleDiscriminator};
pub use generator::{upsample_plan, DurationPredictor, Generator, LangConditioning};
pub use lid::LidClassifier;
pub use mel::{MelAnalyzer, MelConfig, MEL_FLOOR};
pub use train::{AuxReport, VocoderItem, VocoderLosses, VocoderTrainer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Init;
use crate::numerics::{checkpoint, Graph, ParamStore, Tensor};
use crate::synthlang::{FamilyId, LangId, Waveform};
use crate::util::mix_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocoderConfig {
    pub family: FamilyId,
    /// Member languages in embedding order.
    pub langs: Vec<LangId>,
    pub k_units: usize,
    pub num_speakers: usize,
    pub sample_rate: u32,
    /// Feature hop in samples; also the total upsampling factor.
    pub hop: usize,
    pub unit_dim: usize,
    pub spk_dim: usize,
    pub lang_dim: usize,
    pub base_channels: usize,
    pub resblocks: usize,
    pub use_lang_embedding: bool,
    pub lang_conditioning: LangConditioning,
    pub mel: MelConfig,
    pub lambda_mel: f64,
    pub lambda_fm: f64,
    pub lambda_adv: f64,
    pub lambda_lid: f64,
    pub mpd_periods: Vec<usize>,
    pub msd_scales: Vec<usize>,
    pub lid_hidden: usize,
    pub segment_frames: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl VocoderConfig {
    /// Multilingual desk-scale configuration (small variant).
    pub fn desk_default(
        family: FamilyId,
        langs: Vec<LangId>,
        k_units: usize,
        num_speakers: usize,
        sample_rate: u32,
        hop: usize,
        seed: u64,
    ) -> Self {
        VocoderConfig {
            family,
            langs,
            k_units,
            num_speakers,
            sample_rate,
            hop,
            unit_dim: 32,
            spk_dim: 128,
            lang_dim: 128,
            base_channels: 48,
            resblocks: 4,
            use_lang_embedding: true,
            lang_conditioning: LangConditioning::PrependFrame,
            mel: MelConfig::for_rate(sample_rate, hop),
            lambda_mel: 45.0,
            lambda_fm: 2.0,
            lambda_adv: 1.0,
            lambda_lid: 1.0,
            mpd_periods: vec![2, 3],
            msd_scales: vec![1, 2],
            lid_hidden: 24,
            segment_frames: 24,
            learning_rate: 2e-4,
            batch_size: 16,
            seed,
        }
    }

    /// Large variant: doubled unit embedding and wider stacks.
    pub fn large(mut self) -> Self {
        self.unit_dim = 64;
        self.base_channels = 64;
        self.resblocks = 6;
        self
    }

    /// Monolingual: one language, no language embedding.
    pub fn monolingual(mut self, lang: LangId) -> Self {
        self.langs = vec![lang];
        self.use_lang_embedding = false;
        self.lambda_lid = 0.0;
        self
    }

    pub fn without_lid(mut self) -> Self {
        self.lambda_lid = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.langs.is_empty() || self.k_units == 0 || self.num_speakers == 0 {
            return Err(Error::Config("vocoder: empty language/unit/speaker table".into()));
        }
        let plan = upsample_plan(self.hop)?;
        let product: usize = plan.iter().map(|&(s, _, _)| s).product();
        if product != self.hop {
            return Err(Error::Config(format!(
                "upsampling strides multiply to {product}, expected hop {}",
                self.hop
            )));
        }
        Ok(())
    }
}

pub struct VocoderBundle {
    pub cfg: VocoderConfig,
    pub gen_store: ParamStore,
    pub generator: Generator,
    pub dur_store: ParamStore,
    pub duration: DurationPredictor,
    pub disc_store: ParamStore,
    pub discriminators: DiscriminatorSet,
    /// Always constructed and trained on real audio; `lambda_lid` only gates
    /// whether its loss reaches the generator.
    pub lid_store: ParamStore,
    pub lid: LidClassifier,
    pub mel: MelAnalyzer,
}

impl VocoderBundle {
    pub fn new(cfg: VocoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut gen_store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x6e0]));
        let generator = Generator::new(&mut Init::new(&mut gen_store, &mut rng), &cfg)?;

        let mut dur_store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0xd00]));
        let duration = DurationPredictor::new(&mut Init::new(&mut dur_store, &mut rng), cfg.unit_dim)?;

        let mut disc_store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0xd15]));
        let discriminators = DiscriminatorSet::new(
            &mut Init::new(&mut disc_store, &mut rng),
            &cfg.mpd_periods,
            &cfg.msd_scales,
        )?;

        let mut lid_store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x11d]));
        let lid = LidClassifier::new(
            &mut Init::new(&mut lid_store, &mut rng),
            cfg.mel.n_mels,
            cfg.lid_hidden,
            cfg.langs.len(),
        )?;

        let mel = MelAnalyzer::new(cfg.mel);
        Ok(VocoderBundle {
            cfg,
            gen_store,
            generator,
            dur_store,
            duration,
            disc_store,
            discriminators,
            lid_store,
            lid,
            mel,
        })
    }

    pub fn lang_index(&self, lang: LangId) -> Result<usize> {
        self.cfg
            .langs
            .iter()
            .position(|&l| l == lang)
            .ok_or_else(|| Error::Vocabulary(format!("language {} not in this vocoder", lang.0)))
    }

    /// Waveform samples in [-1, 1] for raw family units.
    pub fn generate(
        &self,
        units: &[u32],
        durations: &[usize],
        speaker: u32,
        lang_index: usize,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let ps = self.gen_store.attach_frozen(&mut g);
        let wave = self
            .generator
            .forward(&mut g, &ps, &self.cfg, units, durations, speaker, lang_index)?;
        Ok(g.value(wave).data().to_vec())
    }

    /// Duration predictor output for a unit sequence.
    pub fn predict_durations(&self, units: &[u32]) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let gen_ps = self.gen_store.attach_frozen(&mut g);
        let dur_ps = self.dur_store.attach_frozen(&mut g);
        let emb = g.embedding(
            gen_ps.node(self.generator.unit_embedding),
            std::rc::Rc::new(units.to_vec()),
        )?;
        let logd = self.duration.forward(&mut g, &dur_ps, emb)?;
        Ok(self.duration.predict(g.value(logd)))
    }

    /// Units -> PCM16 waveform with predicted durations.
    pub fn resynthesize(
        &self,
        units: &[u32],
        speaker: u32,
        lang: LangId,
    ) -> Result<Waveform> {
        let lang_index = self.lang_index(lang)?;
        let durations = self.predict_durations(units)?;
        let samples = self.generate(units, &durations, speaker, lang_index)?;
        Ok(Waveform::from_f64(&samples, self.cfg.sample_rate))
    }

    /// As `resynthesize` but with caller-provided (gold) durations.
    pub fn resynthesize_with_durations(
        &self,
        units: &[u32],
        durations: &[usize],
        speaker: u32,
        lang: LangId,
    ) -> Result<Waveform> {
        let lang_index = self.lang_index(lang)?;
        let samples = self.generate(units, durations, speaker, lang_index)?;
        Ok(Waveform::from_f64(&samples, self.cfg.sample_rate))
    }

    /// LID distribution over the bundle's languages for arbitrary audio.
    pub fn lid_distribution(&self, wave: &Waveform) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let ps = self.lid_store.attach_frozen(&mut g);
        let x = g.constant(Tensor::from_vec(wave.to_f64()));
        let mel = self.mel.apply(&mut g, x)?;
        let dist = self.lid.forward(&mut g, &ps, mel)?;
        Ok(g.value(dist).data().to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta_json = serde_json::to_string(&self.cfg)
            .map_err(|e| Error::Checkpoint(format!("config encode: {e}")))?;
        let meta = checkpoint::bytes_to_tensor(meta_json.as_bytes());
        let mut arrays: Vec<(&str, &Tensor)> = Vec::new();
        for store in [&self.gen_store, &self.dur_store, &self.disc_store, &self.lid_store] {
            arrays.extend(store.iter());
        }
        arrays.push(("meta/config_json", &meta));
        checkpoint::save_to_path(path, &arrays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = checkpoint::load_from_path(path)?;
        let meta = entries
            .iter()
            .find(|(n, _)| n == "meta/config_json")
            .ok_or_else(|| Error::Checkpoint("vocoder container missing config".into()))?;
        let json = String::from_utf8(checkpoint::tensor_to_bytes(&meta.1))
            .map_err(|_| Error::Checkpoint("bad config bytes".into()))?;
        let cfg: VocoderConfig = serde_json::from_str(&json)
            .map_err(|e| Error::Checkpoint(format!("config decode: {e}")))?;
        let mut bundle = VocoderBundle::new(cfg)?;
        let named: Vec<(String, Tensor)> = entries
            .into_iter()
            .filter(|(n, _)| n != "meta/config_json")
            .collect();
        for store in [
            &mut bundle.gen_store,
            &mut bundle.dur_store,
            &mut bundle.disc_store,
            &mut bundle.lid_store,
        ] {
            let own: Vec<(String, Tensor)> = named
                .iter()
                .filter(|(n, _)| store.id_of(n).is_some())
                .cloned()
                .collect();
            store.load_values(&own)?;
        }
        Ok(bundle)
    }
}

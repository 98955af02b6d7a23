//! Teacher-forced training loop for the translation model.

use crate::error::{Error, Result};
use crate::nn::TrainCtx;
use crate::numerics::{Adam, AdamConfig, Graph};
use crate::s2mu::loss::{masked_loss, BatchExample, LogitsBundle, LossReport, MaskSet};
use crate::s2mu::S2MUModel;
use crate::util::mix_seed;

#[derive(Debug, Clone, Copy)]
pub struct TrainerConfig {
    pub adam: AdamConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            // warmup then inverse-sqrt decay around the base rate
            adam: AdamConfig::with_warmup(2e-3, 150),
        }
    }
}

pub struct S2MUTrainer {
    pub model: S2MUModel,
    pub adam: Adam,
}

impl S2MUTrainer {
    pub fn new(model: S2MUModel, cfg: TrainerConfig) -> Self {
        let adam = Adam::new(cfg.adam, &model.store);
        S2MUTrainer { model, adam }
    }

    pub fn step_count(&self) -> u64 {
        self.adam.state.step_count
    }

    /// Forward, masked loss, backward, Adam update. Dropout is active and
    /// seeded by `(model seed, step)`.
    pub fn train_step(&mut self, batch: &[BatchExample], masks: &MaskSet) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("train_step: empty batch".into()));
        }
        let step = self.adam.state.step_count;
        let mut tc = TrainCtx::new(
            self.model.cfg.dropout,
            mix_seed(&[self.model.cfg.seed, 0xd20, step]),
        );
        let mut g = Graph::new();
        let ps = self.model.store.attach(&mut g);
        let mut bundles = Vec::with_capacity(batch.len());
        for ex in batch {
            let enc = self.model.encode(&mut g, &ps, &ex.features, Some(&mut tc))?;
            let logits =
                self.model
                    .logits(&mut g, &ps, enc, &ex.decoder_input(), Some(&mut tc))?;
            bundles.push(LogitsBundle { logits, example: ex, mask_override: None });
        }
        let (loss_node, report) = masked_loss(
            &mut g,
            &bundles,
            masks,
            self.model.cfg.label_smoothing,
            self.model.cfg.loss_normalizer,
        )?;
        if !report.loss.is_finite() {
            let ids: Vec<&str> = batch.iter().map(|e| e.id.as_str()).collect();
            return Err(Error::Training(format!(
                "non-finite loss {} on batch {ids:?}",
                report.loss
            )));
        }
        g.backward(loss_node)?;
        let grads = self.model.store.gradients(&g, &ps);
        self.adam.step(&mut self.model.store, &grads)?;
        Ok(report)
    }

    /// Loss and accuracy without dropout or updates.
    pub fn evaluate(&self, batch: &[BatchExample], masks: &MaskSet) -> Result<LossReport> {
        evaluate_model(&self.model, batch, masks)
    }
}

/// Teacher-forced evaluation of a model on a batch.
pub fn evaluate_model(
    model: &S2MUModel,
    batch: &[BatchExample],
    masks: &MaskSet,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("evaluate: empty batch".into()));
    }
    let mut g = Graph::new();
    let ps = model.store.attach_frozen(&mut g);
    let mut bundles = Vec::with_capacity(batch.len());
    for ex in batch {
        let enc = model.encode(&mut g, &ps, &ex.features, None)?;
        let logits = model.logits(&mut g, &ps, enc, &ex.decoder_input(), None)?;
        bundles.push(LogitsBundle { logits, example: ex, mask_override: None });
    }
    let (_, report) = masked_loss(
        &mut g,
        &bundles,
        masks,
        0.0,
        model.cfg.loss_normalizer,
    )?;
    Ok(report)
}

//! Masked cross-entropy over the target language's allowed unit set.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, RowMasks, Tensor};
use crate::s2mu::LossNormalizer;
use crate::synthlang::LangId;
use crate::vocab::{ExtendedVocabulary, LanguageMask, BOS};

/// One training example: source features plus the encoded target sequence
/// `[tag, units..., eos]`.
#[derive(Debug, Clone)]
pub struct BatchExample {
    pub id: String,
    pub features: Tensor,
    pub target: Vec<u32>,
    pub lang: LangId,
}

impl BatchExample {
    /// Teacher-forcing input: `[bos]` plus the target shifted right.
    pub fn decoder_input(&self) -> Vec<u32> {
        let mut input = Vec::with_capacity(self.target.len());
        input.push(BOS);
        input.extend_from_slice(&self.target[..self.target.len() - 1]);
        input
    }

    /// Tokens that enter the loss: everything after the forced language tag.
    pub fn scored_targets(&self) -> &[u32] {
        &self.target[1..]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    pub token_accuracy: f64,
    pub tokens: usize,
}

/// Shared per-language allowed-index lists, cheap to clone into row masks.
#[derive(Debug, Clone)]
pub struct MaskSet {
    per_lang: BTreeMap<LangId, Rc<Vec<u32>>>,
    full_units: Rc<Vec<u32>>,
}

impl MaskSet {
    pub fn for_vocab(vocab: &ExtendedVocabulary) -> Self {
        let mut per_lang = BTreeMap::new();
        for block in vocab.blocks() {
            let _ = block;
        }
        // every language that owns a family gets a mask
        for lang_idx in 0..vocab.num_languages() {
            let lang = LangId(lang_idx as u32);
            if let Ok(mask) = vocab.mask_for(lang) {
                per_lang.insert(lang, Rc::new(mask.allowed_ids()));
            }
        }
        let full = LanguageMask::full_unit_mask(vocab);
        MaskSet {
            per_lang,
            full_units: Rc::new(full.allowed_ids()),
        }
    }

    pub fn allowed(&self, lang: LangId) -> Result<&Rc<Vec<u32>>> {
        self.per_lang
            .get(&lang)
            .ok_or_else(|| Error::Vocabulary(format!("no mask for language {}", lang.0)))
    }

    /// Whole unit vocabulary plus eos (the cross-entropy reduction case).
    pub fn full_units(&self) -> &Rc<Vec<u32>> {
        &self.full_units
    }
}

/// Logits node paired with the example it scores.
pub struct LogitsBundle<'a> {
    pub logits: NodeId,
    pub example: &'a BatchExample,
    /// Override mask (e.g. the full-vocabulary reduction); defaults to the
    /// example language's mask.
    pub mask_override: Option<Rc<Vec<u32>>>,
}

/// Token-weighted masked cross-entropy over a batch. Returns the scalar loss
/// node and the detached report.
pub fn masked_loss(
    g: &mut Graph,
    bundles: &[LogitsBundle],
    masks: &MaskSet,
    smoothing: f64,
    normalizer: LossNormalizer,
) -> Result<(NodeId, LossReport)> {
    if bundles.is_empty() {
        return Err(Error::InvalidArgument("masked_loss: empty batch".into()));
    }
    let mut total_tokens = 0usize;
    let mut example_sums = Vec::with_capacity(bundles.len());
    let mut correct = 0usize;

    for bundle in bundles {
        let ex = bundle.example;
        let allowed: Rc<Vec<u32>> = match &bundle.mask_override {
            Some(m) => Rc::clone(m),
            None => Rc::clone(masks.allowed(ex.lang)?),
        };
        let golds = ex.scored_targets();
        for &gold in golds {
            if allowed.binary_search(&gold).is_err() {
                return Err(Error::DataIntegrity(format!(
                    "example {}: gold token {gold} outside the allowed set of language {}",
                    ex.id, ex.lang.0
                )));
            }
        }
        let rows = golds.len();
        total_tokens += rows;
        // logits row j predicts target[j]; row 0 predicts the forced tag and
        // is excluded
        let scored = g.slice_rows(bundle.logits, 1, rows)?;
        let row_masks: Rc<RowMasks> = Rc::new(vec![Rc::clone(&allowed); rows]);
        let logp = match normalizer {
            LossNormalizer::RestrictedSoftmax => {
                g.masked_log_softmax_rows(scored, Rc::clone(&row_masks))?
            }
            LossNormalizer::FullSoftmaxRestrictedSum => g.log_softmax_rows(scored),
        };
        let golds_rc = Rc::new(golds.to_vec());
        let nll = g.smoothed_nll_rows(logp, golds_rc, Some(Rc::clone(&row_masks)), smoothing)?;
        example_sums.push(g.sum_all(nll));

        // masked argmax accuracy straight from the logits values
        let v = g.value(scored);
        for (j, &gold) in golds.iter().enumerate() {
            let row = v.row(j);
            let mut best = (allowed[0], f64::NEG_INFINITY);
            for &id in allowed.iter() {
                let s = row[id as usize];
                if s > best.1 {
                    best = (id, s);
                }
            }
            if best.0 == gold {
                correct += 1;
            }
        }
    }

    let mut acc = example_sums[0];
    for &s in &example_sums[1..] {
        acc = g.add(acc, s)?;
    }
    let loss_node = g.scale(acc, 1.0 / total_tokens.max(1) as f64);
    let loss = g.value(loss_node).data()[0];
    Ok((
        loss_node,
        LossReport {
            loss,
            token_accuracy: correct as f64 / total_tokens.max(1) as f64,
            tokens: total_tokens,
        },
    ))
}

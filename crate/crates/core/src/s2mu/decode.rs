//! Autoregressive decoding with the language mask forcing disallowed units
//! to the negative sentinel, greedy or beam.

use crate::discretize::RunLengthUnits;
use crate::error::Result;
use crate::numerics::{Graph, Tensor};
use crate::s2mu::S2MUModel;
use crate::synthlang::LangId;
use crate::vocab::{LanguageMask, BOS, EOS};

#[derive(Debug, Clone, Copy)]
pub struct DecodeOptions {
    pub beam: usize,
    pub max_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { beam: 1, max_len: 96 }
    }
}

const LENGTH_NORM_POWER: f64 = 0.7;

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// Emitted unit sequence in extended ids (eos stripped); durations are
    /// placeholders of 1 frame until the vocoder's duration predictor runs.
    pub units: RunLengthUnits,
    /// Set when max_len was reached before eos.
    pub truncated: bool,
    /// Length-normalized log-probability of the chosen hypothesis.
    pub score: f64,
    /// Per step: total probability mass of the candidate distribution the
    /// decoder sampled from (exactly 1 for masked softmax by construction).
    pub step_masses: Vec<f64>,
}

/// Decode restricted to `m^l ∪ {eos}`: disallowed logits receive the
/// negative sentinel before normalization, so only target-language units can
/// be generated.
pub fn masked_decode(
    model: &S2MUModel,
    features: &Tensor,
    target_lang: LangId,
    opts: DecodeOptions,
) -> Result<DecodeOutput> {
    decode_inner(model, features, target_lang, opts, true)
}

/// Ablation mode: the same search without the mask; any id may be emitted.
pub fn unmasked_decode(
    model: &S2MUModel,
    features: &Tensor,
    target_lang: LangId,
    opts: DecodeOptions,
) -> Result<DecodeOutput> {
    decode_inner(model, features, target_lang, opts, false)
}

/// Fraction of emitted ids outside the language mask.
pub fn leakage_rate(units: &[u32], mask: &LanguageMask) -> f64 {
    if units.is_empty() {
        return 0.0;
    }
    let outside = units
        .iter()
        .filter(|&&u| !mask.allowed.get(u as usize).copied().unwrap_or(false))
        .count();
    outside as f64 / units.len() as f64
}

#[derive(Clone)]
struct Hypothesis {
    input: Vec<u32>,
    emitted: Vec<u32>,
    logp: f64,
    finished: bool,
}

impl Hypothesis {
    fn normalized(&self) -> f64 {
        let t = self.emitted.len().max(1) as f64;
        self.logp / t.powf(LENGTH_NORM_POWER)
    }
}

fn decode_inner(
    model: &S2MUModel,
    features: &Tensor,
    target_lang: LangId,
    opts: DecodeOptions,
    masked: bool,
) -> Result<DecodeOutput> {
    let tag = model.vocab.language_tag(target_lang)?;
    let family = model.vocab.family_of_lang(target_lang)?;
    let allowed: Vec<u32> = if masked {
        model.vocab.mask_for(target_lang)?.allowed_ids()
    } else {
        (0..model.vocab.size()).collect()
    };

    let mut g = Graph::new();
    let ps = model.store.attach_frozen(&mut g);
    let enc = model.encode(&mut g, &ps, features, None)?;

    let beam = opts.beam.max(1);
    let mut live = vec![Hypothesis {
        input: vec![BOS, tag],
        emitted: Vec::new(),
        logp: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut step_masses = Vec::new();

    for _ in 0..opts.max_len {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &live {
            let logits = model.logits(&mut g, &ps, enc, &hyp.input, None)?;
            let last = g.value(logits).row(hyp.input.len() - 1).to_vec();
            let logp = log_softmax_over(&last, &allowed);
            step_masses.push(logp.iter().map(|&(_, lp)| lp.exp()).sum());
            // top candidates by logp, ties to the lower token id
            let mut ranked: Vec<(u32, f64)> = logp;
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            for &(tok, lp) in ranked.iter().take(beam) {
                let mut next = hyp.clone();
                next.logp += lp;
                next.emitted.push(tok);
                if tok == EOS {
                    next.finished = true;
                } else {
                    next.input.push(tok);
                }
                candidates.push(next);
            }
        }
        candidates.sort_by(|a, b| b.logp.total_cmp(&a.logp).then(a.emitted.cmp(&b.emitted)));
        live = Vec::new();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else if live.len() < beam {
                live.push(c);
            }
        }
        if finished.len() >= beam {
            break;
        }
    }

    // prefer finished hypotheses; fall back to the best live (truncated) one
    let pick_from = if finished.is_empty() { &live } else { &finished };
    let best = pick_from
        .iter()
        .max_by(|a, b| {
            a.normalized()
                .total_cmp(&b.normalized())
                .then_with(|| b.emitted.cmp(&a.emitted))
        })
        .expect("decode always retains at least one hypothesis");
    let truncated = !best.finished;
    let mut units = best.emitted.clone();
    if best.finished {
        units.pop(); // strip eos
    }
    let n = units.len();
    Ok(DecodeOutput {
        units: RunLengthUnits {
            units,
            durations: vec![1; n],
            family,
            lang: target_lang,
        },
        truncated,
        score: best.normalized(),
        step_masses,
    })
}

/// Log-softmax over a subset of logits, computed in log space with
/// max-subtraction; returns (id, logp) pairs for the subset.
fn log_softmax_over(row: &[f64], allowed: &[u32]) -> Vec<(u32, f64)> {
    let max = allowed
        .iter()
        .map(|&i| row[i as usize])
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = allowed
        .iter()
        .map(|&i| (row[i as usize] - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    allowed.iter().map(|&i| (i, row[i as usize] - lse)).collect()
}

/// Greedy argmax chain, used as an independent check of beam width 1.
pub fn greedy_decode_reference(
    model: &S2MUModel,
    features: &Tensor,
    target_lang: LangId,
    max_len: usize,
    masked: bool,
) -> Result<(Vec<u32>, bool)> {
    let tag = model.vocab.language_tag(target_lang)?;
    let allowed: Vec<u32> = if masked {
        model.vocab.mask_for(target_lang)?.allowed_ids()
    } else {
        (0..model.vocab.size()).collect()
    };
    let mut g = Graph::new();
    let ps = model.store.attach_frozen(&mut g);
    let enc = model.encode(&mut g, &ps, features, None)?;
    let mut input = vec![BOS, tag];
    let mut out = Vec::new();
    for _ in 0..max_len {
        let logits = model.logits(&mut g, &ps, enc, &input, None)?;
        let row = g.value(logits).row(input.len() - 1);
        let mut best = (allowed[0], f64::NEG_INFINITY);
        for &id in &allowed {
            if row[id as usize] > best.1 {
                best = (id, row[id as usize]);
            }
        }
        if best.0 == EOS {
            return Ok((out, false));
        }
        out.push(best.0);
        input.push(best.0);
    }
    Ok((out, true))
}

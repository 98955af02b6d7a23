//! Corpus-level BLEU over symbol sequences, n-gram orders 1-4, clipped
//! counts, brevity penalty, add-one smoothing on zero-match orders.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Modified n-gram precisions p1..p4 after smoothing.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    /// Corpus score in [0, 100].
    pub score: f64,
    pub hypothesis_tokens: usize,
    pub reference_tokens: usize,
}

fn ngram_counts(seq: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut map = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

/// Corpus BLEU of (hypothesis, reference) pairs.
pub fn bleu(corpus: &[(Vec<u32>, Vec<u32>)]) -> Result<BleuReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("bleu: empty corpus".into()));
    }
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in corpus {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let hyp_counts = ngram_counts(hyp, n);
            let ref_counts = ngram_counts(reference, n);
            for (gram, &c) in &hyp_counts {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matched[n - 1] += c.min(clip);
            }
            total[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    for n in 0..MAX_ORDER {
        let p = if matched[n] == 0 {
            (matched[n] + 1) as f64 / (total[n] + 1) as f64
        } else {
            matched[n] as f64 / total[n] as f64
        };
        precisions[n] = p;
        log_sum += p.ln() / MAX_ORDER as f64;
    }
    let bp = if hyp_len < ref_len && hyp_len > 0 {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else if hyp_len == 0 {
        0.0
    } else {
        1.0
    };
    let score = if hyp_len == 0 { 0.0 } else { 100.0 * bp * log_sum.exp() };
    Ok(BleuReport {
        precisions,
        brevity_penalty: bp,
        score,
        hypothesis_tokens: hyp_len,
        reference_tokens: ref_len,
    })
}

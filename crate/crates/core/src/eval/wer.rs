//! Word error rate via Levenshtein alignment with unit costs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_length: usize,
    pub rate: f64,
}

/// Levenshtein alignment of hypothesis against reference. Among cost-equal
/// alignments the backtrack prefers substitutions over insert+delete pairs,
/// making the (S, I, D) split deterministic.
pub fn wer<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> WerReport {
    let n = reference.len();
    let m = hypothesis.len();
    // cost[i][j]: edit distance between reference[..i] and hypothesis[..j]
    let mut cost = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        cost[idx(i, 0)] = i;
    }
    for j in 0..=m {
        cost[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = cost[idx(i - 1, j - 1)] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = cost[idx(i - 1, j)] + 1;
            let ins = cost[idx(i, j - 1)] + 1;
            cost[idx(i, j)] = sub.min(del).min(ins);
        }
    }

    let (mut i, mut j) = (n, m);
    let (mut subs, mut ins, mut dels) = (0usize, 0usize, 0usize);
    while i > 0 || j > 0 {
        let c = cost[idx(i, j)];
        if i > 0 && j > 0 {
            let was_match = reference[i - 1] == hypothesis[j - 1];
            let diag = cost[idx(i - 1, j - 1)] + usize::from(!was_match);
            if diag == c {
                if !was_match {
                    subs += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[idx(i - 1, j)] + 1 == c {
            dels += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }

    let total = subs + ins + dels;
    WerReport {
        substitutions: subs,
        insertions: ins,
        deletions: dels,
        reference_length: n,
        rate: total as f64 / n.max(1) as f64,
    }
}

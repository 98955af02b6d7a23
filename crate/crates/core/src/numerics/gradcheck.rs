//! Central finite-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Compare analytic gradients of a scalar-valued builder against central
/// finite differences.
///
/// `build` receives gradient-requiring leaves holding the parameter values
/// and must return the scalar loss node. The relative error per coordinate is
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`; the maximum
/// over all checked coordinates is returned.
pub fn finite_difference_check<F>(params: &[Tensor], epsilon: f64, build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    finite_difference_check_sampled(params, epsilon, usize::MAX, 0, build)
}

/// As `finite_difference_check`, but caps the number of coordinates checked
/// per parameter, sampling them with a seeded RNG. Full model graphs are too
/// wide to difference every coordinate inside a time budget; op-level tests
/// use the exhaustive form.
pub fn finite_difference_check_sampled<F>(
    params: &[Tensor],
    epsilon: f64,
    max_coords_per_param: usize,
    seed: u64,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    // analytic pass
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = params.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &leaves)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(params)
        .map(|(&id, t)| g.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    drop(g);

    let mut eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, &leaves)?;
        Ok(g.value(loss).data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;

    for (pi, tensor) in params.iter().enumerate() {
        let n = tensor.numel();
        let coords: Vec<usize> = if n <= max_coords_per_param {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            all.truncate(max_coords_per_param);
            all
        };
        for ci in coords {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + epsilon;
            let up = eval(&work)?;
            work[pi].data_mut()[ci] = orig - epsilon;
            let down = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[pi][ci];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        coords_checked: checked,
    })
}

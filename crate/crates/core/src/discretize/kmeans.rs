//! Per-family k-means unit quantizer: k-means++ seeding, Lloyd iterations,
//! farthest-point re-seeding of emptied clusters.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::synthlang::FamilyId;

#[derive(Debug, Clone)]
pub struct KMeansModel {
    /// [k, D]
    pub centroids: Tensor,
    pub k: usize,
    pub family: FamilyId,
    pub inertia: f64,
}

#[derive(Debug, Clone)]
pub struct KMeansTraining {
    pub model: KMeansModel,
    /// Inertia after each Lloyd iteration; non-increasing.
    pub inertia_history: Vec<f64>,
}

/// Squared Euclidean distance with early abort once `bound` is exceeded.
/// Comparisons stay exact: the partial sum only grows, so aborting at
/// `>= bound` can never discard a strictly closer centroid.
#[inline]
fn dist_sq_bounded(a: &[f64], b: &[f64], bound: f64) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
        if acc >= bound {
            return acc;
        }
    }
    acc
}

#[inline]
fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid index under squared Euclidean distance, lowest index on
/// ties.
pub fn nearest_centroid(row: &[f64], centroids: &Tensor) -> (usize, f64) {
    let d = centroids.cols();
    let mut best = (0usize, f64::INFINITY);
    for c in 0..centroids.rows() {
        let dist = dist_sq_bounded(row, &centroids.data()[c * d..(c + 1) * d], best.1);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

pub fn kmeans_train(
    features: &Tensor,
    k: usize,
    family: FamilyId,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansTraining> {
    let n = features.rows();
    let d = features.cols();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k} must be >= 2")));
    }
    let distinct = count_distinct_rows(features, k);
    if distinct < k {
        return Err(Error::Infeasible { distinct, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeanspp_init(features, k, &mut rng);

    let mut assignment = vec![0usize; n];
    let mut history = Vec::new();
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..max_iters.max(1) {
        // assign
        let mut inertia = 0.0;
        for i in 0..n {
            let (c, dist) = nearest_centroid(features.row(i), &centroids);
            assignment[i] = c;
            inertia += dist;
        }
        history.push(inertia);

        // update
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        let mut new_data = centroids.data().to_vec();
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    new_data[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
        let mut next = Tensor::new(vec![k, d], new_data)?;
        reseed_empty_clusters(features, &assignment, &counts, &mut next);
        centroids = next;

        if prev_inertia - inertia < tol {
            break;
        }
        prev_inertia = inertia;
    }

    // final assignment pass for the reported inertia
    let mut inertia = 0.0;
    for i in 0..n {
        inertia += nearest_centroid(features.row(i), &centroids).1;
    }

    Ok(KMeansTraining {
        model: KMeansModel {
            centroids,
            k,
            family,
            inertia,
        },
        inertia_history: history,
    })
}

fn kmeanspp_init(features: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = features.rows();
    let d = features.cols();
    let mut data = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    data.extend_from_slice(features.row(first));
    let mut min_dist: Vec<f64> = (0..n)
        .map(|i| dist_sq(features.row(i), &data[0..d]))
        .collect();
    for c in 1..k {
        let total: f64 = min_dist.iter().sum();
        let chosen = if total <= 0.0 {
            // all remaining points coincide with a centroid; pick any
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in min_dist.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        data.extend_from_slice(features.row(chosen));
        let crow = &data[c * d..(c + 1) * d];
        for i in 0..n {
            let dist = dist_sq(features.row(i), crow);
            if dist < min_dist[i] {
                min_dist[i] = dist;
            }
        }
    }
    Tensor::new(vec![k, d], data).unwrap()
}

/// Re-seed each empty cluster to the point farthest from its own centroid.
fn reseed_empty_clusters(
    features: &Tensor,
    assignment: &[usize],
    counts: &[usize],
    centroids: &mut Tensor,
) {
    let d = centroids.cols();
    for c in 0..counts.len() {
        if counts[c] > 0 {
            continue;
        }
        let mut far = (0usize, -1.0);
        for (i, &a) in assignment.iter().enumerate() {
            let crow_start = a * d;
            let crow = &centroids.data()[crow_start..crow_start + d];
            let dist = dist_sq(features.row(i), crow);
            if dist > far.1 {
                far = (i, dist);
            }
        }
        let row = features.row(far.0).to_vec();
        centroids.data_mut()[c * d..(c + 1) * d].copy_from_slice(&row);
    }
}

fn count_distinct_rows(features: &Tensor, stop_at: usize) -> usize {
    let d = features.cols();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for i in 0..features.rows() {
        let key: Vec<u64> = features.row(i).iter().map(|v| v.to_bits()).collect();
        seen.insert(key);
        if seen.len() >= stop_at {
            return seen.len();
        }
        let _ = d;
    }
    seen.len()
}

/// Frame-level unit ids for a feature matrix.
pub fn quantize(features: &Tensor, model: &KMeansModel) -> Result<Vec<u32>> {
    if features.cols() != model.centroids.cols() {
        return Err(Error::Dimension {
            op: "quantize",
            lhs: features.shape().to_vec(),
            rhs: model.centroids.shape().to_vec(),
        });
    }
    Ok((0..features.rows())
        .map(|i| nearest_centroid(features.row(i), &model.centroids).0 as u32)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn two_clouds(seed: u64) -> (Tensor, [f64; 2]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut sums = [0.0f64; 2];
        for c in 0..2 {
            let center = if c == 0 { -5.0 } else { 5.0 };
            for _ in 0..50 {
                let v = center + rng.random::<f64>() * 0.2 - 0.1;
                sums[c] += v;
                rows.push(vec![v, v * 0.5]);
            }
        }
        (Tensor::from_rows(&rows).unwrap(), [sums[0] / 50.0, sums[1] / 50.0])
    }

    #[test]
    fn two_separated_clouds_recover_means() {
        let (features, means) = two_clouds(3);
        let t = kmeans_train(&features, 2, FamilyId(0), 7, 50, 1e-12).unwrap();
        let mut centers: Vec<f64> = (0..2).map(|c| t.model.centroids.row(c)[0]).collect();
        centers.sort_by(f64::total_cmp);
        assert!((centers[0] - means[0]).abs() < 1e-6);
        assert!((centers[1] - means[1]).abs() < 1e-6);
    }

    #[test]
    fn k_equal_to_distinct_points_gives_zero_inertia() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let features = Tensor::from_rows(&rows).unwrap();
        let t = kmeans_train(&features, 6, FamilyId(0), 1, 100, 0.0).unwrap();
        assert!(t.model.inertia < 1e-18, "inertia {}", t.model.inertia);
    }

    #[test]
    fn inertia_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| rng.random::<f64>() * 10.0).collect())
            .collect();
        let features = Tensor::from_rows(&rows).unwrap();
        let t = kmeans_train(&features, 8, FamilyId(0), 11, 40, 0.0).unwrap();
        for w in t.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn infeasible_when_fewer_distinct_rows() {
        let rows = vec![vec![1.0, 2.0]; 10];
        let features = Tensor::from_rows(&rows).unwrap();
        match kmeans_train(&features, 3, FamilyId(0), 1, 10, 0.0) {
            Err(Error::Infeasible { distinct, k }) => {
                assert_eq!(distinct, 1);
                assert_eq!(k, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quantize_exact_centroid_and_tie_break() {
        let centroids = Tensor::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![5.0, 5.0],
            vec![9.0, 9.0],
            vec![3.0, 0.0],
        ])
        .unwrap();
        let model = KMeansModel { centroids, k: 5, family: FamilyId(0), inertia: 0.0 };
        // feature equal to centroid 3
        let f = Tensor::from_rows(&[vec![9.0, 9.0]]).unwrap();
        assert_eq!(quantize(&f, &model).unwrap(), vec![3]);
        // equidistant between centroids 1 and 4 -> lower index wins
        let f = Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert_eq!(quantize(&f, &model).unwrap(), vec![1]);
    }

    #[test]
    fn quantize_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let k = 12;
        let d = 6;
        let centroids = Tensor::randn(&[k, d], 1.0, &mut rng);
        let model = KMeansModel {
            centroids: centroids.clone(),
            k,
            family: FamilyId(0),
            inertia: 0.0,
        };
        let frames = Tensor::randn(&[1000, d], 1.0, &mut rng);
        let fast = quantize(&frames, &model).unwrap();
        for i in 0..frames.rows() {
            let row = frames.row(i);
            let mut best = (0usize, f64::INFINITY);
            for c in 0..k {
                let dist: f64 = row
                    .iter()
                    .zip(centroids.row(c))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            assert_eq!(fast[i] as usize, best.0, "frame {i}");
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = KMeansModel {
            centroids: Tensor::zeros(&[2, 3]),
            k: 2,
            family: FamilyId(0),
            inertia: 0.0,
        };
        let f = Tensor::zeros(&[5, 4]);
        assert!(quantize(&f, &model).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let (features, _) = two_clouds(9);
        let a = kmeans_train(&features, 4, FamilyId(1), 21, 30, 1e-9).unwrap();
        let b = kmeans_train(&features, 4, FamilyId(1), 21, 30, 1e-9).unwrap();
        assert_eq!(a.model.centroids.data(), b.model.centroids.data());
    }
}

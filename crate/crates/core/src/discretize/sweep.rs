//! Unit-extraction configuration sweep: run a quality probe over the
//! (feature config x cluster size) grid and select the argmax.

use crate::discretize::FeatureConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub cfg: FeatureConfig,
    pub k: usize,
    /// Higher is better; the pipeline probe reports round-trip unit recovery
    /// through a small vocoder.
    pub metric: f64,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub points: Vec<SweepPoint>,
    /// Index of the selected grid point.
    pub best: usize,
}

impl SweepTable {
    pub fn best_point(&self) -> &SweepPoint {
        &self.points[self.best]
    }
}

/// Evaluate `probe` at every grid point; ties keep the earlier point.
pub fn sweep_units<P>(
    feature_cfgs: &[FeatureConfig],
    k_values: &[usize],
    mut probe: P,
) -> Result<SweepTable>
where
    P: FnMut(FeatureConfig, usize) -> Result<f64>,
{
    if feature_cfgs.is_empty() || k_values.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep_units: empty configuration grid".into(),
        ));
    }
    let mut points = Vec::with_capacity(feature_cfgs.len() * k_values.len());
    let mut best = 0usize;
    for &cfg in feature_cfgs {
        for &k in k_values {
            let metric = probe(cfg, k)?;
            points.push(SweepPoint { cfg, k, metric });
            if points[points.len() - 1].metric > points[best].metric {
                best = points.len() - 1;
            }
        }
    }
    Ok(SweepTable { points, best })
}

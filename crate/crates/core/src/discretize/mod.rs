//! Waveform -> frame features -> per-family k-means units, plus the
//! unit-extraction configuration sweep.

pub mod features;
pub mod kmeans;
mod sweep;
mod units;

pub use features::{
    extract_features, mean_normalize, FeatureConfig, FeatureExtractor, Filterbank, FrameFeatures,
    LOG_FLOOR,
};
pub use kmeans::{kmeans_train, nearest_centroid, quantize, KMeansModel, KMeansTraining};
pub use sweep::{sweep_units, SweepPoint, SweepTable};
pub use units::{
    dedup, read_unit_file, write_duration_file, write_unit_file, RunLengthUnits, UnitFile,
};

use crate::error::Result;
use crate::numerics::{checkpoint, Tensor};
use crate::synthlang::FamilyId;
use std::path::Path;

/// Serialize a k-means model through the checkpoint container.
pub fn save_kmeans(path: &Path, model: &KMeansModel) -> Result<()> {
    let meta = Tensor::from_vec(vec![
        model.k as f64,
        model.family.0 as f64,
        model.inertia,
    ]);
    checkpoint::save_to_path(path, &[("centroids", &model.centroids), ("meta", &meta)])
}

pub fn load_kmeans(path: &Path) -> Result<KMeansModel> {
    let entries = checkpoint::load_from_path(path)?;
    let mut centroids = None;
    let mut meta = None;
    for (name, tensor) in entries {
        match name.as_str() {
            "centroids" => centroids = Some(tensor),
            "meta" => meta = Some(tensor),
            _ => {}
        }
    }
    let (Some(centroids), Some(meta)) = (centroids, meta) else {
        return Err(crate::error::Error::Checkpoint(
            "k-means container missing centroids/meta".into(),
        ));
    };
    Ok(KMeansModel {
        k: meta.data()[0] as usize,
        family: FamilyId(meta.data()[1] as u32),
        inertia: meta.data()[2],
        centroids,
    })
}

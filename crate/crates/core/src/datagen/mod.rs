//! Synthetic scenes and the on-disk dataset format.

pub mod format;
pub mod scene;

pub use format::{sidecar_path, Dataset, DatasetHeader, DATASET_MAGIC, DATASET_VERSION};
pub use scene::{
    class_color, depth_consistency, downsample_labels, generate_scene, generate_scene_full, GeneratedScene,
    Primitive, SyntheticSceneSpec, LABEL_STRIDE,
};

use rayon::prelude::*;

use crate::error::Result;

/// Generates `count` scenes; scene `i` uses seed `seed + i`.
pub fn generate_dataset(spec: &SyntheticSceneSpec, count: usize, seed: u64) -> Result<Dataset> {
    let samples = (0..count as u64)
        .into_par_iter()
        .map(|i| generate_scene(spec, seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader::from_scene_spec(spec),
        samples,
    })
}

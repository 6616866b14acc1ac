//! The AIC-Net scene-completion network: two hybrid 2D/3D extractor branches,
//! stacked-AIC multi-stage aggregation, AIC fusion and a pointwise
//! reconstruction head.

pub mod model;
pub mod projection;
pub mod spec;

pub use model::{AicNet, ExecutedLayer, NetInputs, NetOutput};
pub use projection::{Camera, ProjectionMap, VoxelGrid};
pub use spec::{AggregationSpec, Branches, ExtractorSpec, FusionSpec, LayerRow, NetworkSpec, Section};

use crate::error::{Error, Result};

/// One RGB-D observation with its voxel labels at output resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    /// `[height, width]`.
    pub image: [usize; 2],
    /// Row-major metric depth, 0 = missing.
    pub depth: Vec<f32>,
    /// Row-major `H × W × 3` colour features in [0, 1].
    pub rgb: Vec<f32>,
    /// Label grid extents.
    pub extents: [usize; 3],
    /// Labels in `[1, class_count]`; `class_count` marks empty space.
    pub labels: Vec<u8>,
    /// Optional per-voxel loss weights.
    pub weights: Option<Vec<f32>>,
}

impl SceneSample {
    pub fn validate(&self, class_count: usize) -> Result<()> {
        let pixels = self.image[0] * self.image[1];
        let voxels: usize = self.extents.iter().product();
        if self.depth.len() != pixels || self.rgb.len() != 3 * pixels {
            return Err(Error::shape(
                "scene sample",
                format!(
                    "{}×{} image needs {pixels} depths and {} colours, got {} / {}",
                    self.image[0],
                    self.image[1],
                    3 * pixels,
                    self.depth.len(),
                    self.rgb.len()
                ),
            ));
        }
        if self.labels.len() != voxels {
            return Err(Error::shape(
                "scene sample",
                format!("{:?} grid needs {voxels} labels, got {}", self.extents, self.labels.len()),
            ));
        }
        if let Some(w) = &self.weights {
            if w.len() != voxels {
                return Err(Error::shape("scene sample", "weight grid size differs from labels"));
            }
        }
        if let Some(i) = self.depth.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::NonFinite {
                what: "depth".into(),
                index: i,
            });
        }
        if let Some(i) = self
            .labels
            .iter()
            .position(|&l| l == 0 || l as usize > class_count)
        {
            return Err(Error::Config(format!(
                "label {} at voxel {i} outside [1, {class_count}]",
                self.labels[i]
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.labels.len()
    }
}

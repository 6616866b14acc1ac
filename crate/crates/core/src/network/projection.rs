//! 2D→3D feature projection through a pinhole camera.
//!
//! Pixel `(u, v)` = (column, row) with depth `d > 0` back-projects to
//! `((u − cx)·d/fx, (v − cy)·d/fy, d)` and lands in voxel
//! `floor((p − origin) / voxel_size)`. Features of pixels sharing a voxel are
//! averaged; points outside the grid are dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    /// Camera-frame point seen by pixel `(u, v)` at depth `d`.
    pub fn back_project(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        [(u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d]
    }

    /// Unnormalised ray direction through pixel `(u, v)`, with unit z component.
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }
}

/// Axis-aligned voxel grid placed in the camera frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelGrid {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub extents: [usize; 3],
}

impl VoxelGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) || !self.voxel_size.is_finite() {
            return Err(Error::Config(format!(
                "voxel_size must be positive, got {}",
                self.voxel_size
            )));
        }
        if self.extents.contains(&0) {
            return Err(Error::Config(format!(
                "grid extents must be positive, got {:?}",
                self.extents
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.extents.iter().product()
    }

    /// Voxel containing `p`, or `None` when outside the grid.
    pub fn locate(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.extents[a] as f64) {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    pub fn flat(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.extents[1] + idx[1]) * self.extents[2] + idx[2]
    }
}

/// Precomputed pixel→voxel assignment for one depth image.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMap {
    image: [usize; 2],
    grid: [usize; 3],
    pixel_voxel: Vec<Option<u32>>,
    counts: Vec<u32>,
}

impl ProjectionMap {
    /// `depth` is row-major `[height, width]`; zero marks a missing measurement.
    pub fn build(depth: &[f32], height: usize, width: usize, camera: &Camera, grid: &VoxelGrid) -> Result<Self> {
        grid.validate()?;
        if depth.len() != height * width {
            return Err(Error::shape(
                "project_2d_to_3d",
                format!("depth has {} values for a {height}×{width} image", depth.len()),
            ));
        }
        if let Some(i) = depth.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::NonFinite {
                what: "depth (must be finite and ≥ 0)".into(),
                index: i,
            });
        }
        let mut counts = vec![0u32; grid.voxel_count()];
        let pixel_voxel = depth
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if d <= 0.0 {
                    return None;
                }
                let (v, u) = (i / width, i % width);
                let p = camera.back_project(u as f64, v as f64, d as f64);
                grid.locate(p).map(|idx| {
                    let flat = grid.flat(idx);
                    counts[flat] += 1;
                    flat as u32
                })
            })
            .collect();
        Ok(ProjectionMap {
            image: [height, width],
            grid: grid.extents,
            pixel_voxel,
            counts,
        })
    }

    pub fn grid(&self) -> [usize; 3] {
        self.grid
    }

    pub fn image(&self) -> [usize; 2] {
        self.image
    }

    /// Voxel hit by each pixel, row-major.
    pub fn pixel_voxels(&self) -> &[Option<u32>] {
        &self.pixel_voxel
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }
}

pub(crate) fn scatter<T: Scalar>(features: &Tensor<T>, maps: &[ProjectionMap]) -> Result<Tensor<T>> {
    if features.rank() != 4 || maps.len() != features.batch() {
        return Err(Error::shape(
            "project_2d_to_3d",
            format!(
                "need [B, C, H, W] features with one map per batch item, got {:?} and {} maps",
                features.shape(),
                maps.len()
            ),
        ));
    }
    let grid = maps[0].grid;
    let c = features.channels();
    let pixels = features.voxels();
    let vox: usize = grid.iter().product();
    let mut out = Tensor::zeros(vec![features.batch(), c, grid[0], grid[1], grid[2]]);
    for (b, map) in maps.iter().enumerate() {
        let hw = [features.shape()[2], features.shape()[3]];
        if map.image != hw || map.grid != grid {
            return Err(Error::shape(
                "project_2d_to_3d",
                format!("map for {:?}/{:?} applied to image {hw:?}", map.image, map.grid),
            ));
        }
        for ch in 0..c {
            let src = &features.data()[(b * c + ch) * pixels..(b * c + ch + 1) * pixels];
            let dst = &mut out.data_mut()[(b * c + ch) * vox..(b * c + ch + 1) * vox];
            for (p, slot) in map.pixel_voxel.iter().enumerate() {
                if let Some(v) = *slot {
                    let v = v as usize;
                    dst[v] += src[p] / T::of(map.counts[v] as f64);
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn scatter_backward<T: Scalar>(
    feature_shape: &[usize],
    maps: &[ProjectionMap],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut gi = Tensor::zeros(feature_shape.to_vec());
    let c = feature_shape[1];
    let pixels = feature_shape[2] * feature_shape[3];
    let vox = grad_out.voxels();
    for (b, map) in maps.iter().enumerate() {
        for ch in 0..c {
            let g = &grad_out.data()[(b * c + ch) * vox..(b * c + ch + 1) * vox];
            let dst = &mut gi.data_mut()[(b * c + ch) * pixels..(b * c + ch + 1) * pixels];
            for (p, slot) in map.pixel_voxel.iter().enumerate() {
                if let Some(v) = *slot {
                    let v = v as usize;
                    dst[p] = g[v] / T::of(map.counts[v] as f64);
                }
            }
        }
    }
    gi
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIT: Camera = Camera {
        fx: 1.0,
        fy: 1.0,
        cx: 0.0,
        cy: 0.0,
    };

    fn grid(extents: [usize; 3]) -> VoxelGrid {
        VoxelGrid {
            origin: [0.0; 3],
            voxel_size: 0.5,
            extents,
        }
    }

    #[test]
    fn hand_back_projection() {
        let map = ProjectionMap::build(&[2.0], 1, 1, &UNIT, &grid([2, 2, 8])).unwrap();
        let g = grid([2, 2, 8]);
        assert_eq!(map.pixel_voxels()[0], Some(g.flat([0, 0, 4]) as u32));
    }

    #[test]
    fn missing_depth_projects_nothing() {
        let map = ProjectionMap::build(&[0.0; 6], 2, 3, &UNIT, &grid([2, 2, 2])).unwrap();
        let f = Tensor::<f64>::full(vec![1, 4, 2, 3], 5.0);
        let v = scatter(&f, &[map]).unwrap();
        assert_eq!(v.shape(), &[1, 4, 2, 2, 2]);
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn collisions_average() {
        // both pixels at u=0 rows 0 and 1 with d=2 → y = 0 and 1·2 = 2 → voxel y index 0 and 4;
        // use a coarse grid so both land in the same voxel.
        let g = VoxelGrid {
            origin: [0.0; 3],
            voxel_size: 4.0,
            extents: [1, 1, 1],
        };
        let map = ProjectionMap::build(&[2.0, 2.0], 2, 1, &UNIT, &g).unwrap();
        assert_eq!(map.counts(), &[2]);
        let f = Tensor::<f64>::new(vec![1, 1, 2, 1], vec![1.0, 3.0]).unwrap();
        let v = scatter(&f, &[map]).unwrap();
        assert_eq!(v.data(), &[2.0]);
    }

    #[test]
    fn out_of_grid_and_bad_voxel_size() {
        let map = ProjectionMap::build(&[100.0], 1, 1, &UNIT, &grid([1, 1, 1])).unwrap();
        assert_eq!(map.pixel_voxels()[0], None);
        let mut bad = grid([1, 1, 1]);
        bad.voxel_size = 0.0;
        assert!(matches!(
            ProjectionMap::build(&[1.0], 1, 1, &UNIT, &bad),
            Err(Error::Config(_))
        ));
        bad.voxel_size = -1.0;
        assert!(ProjectionMap::build(&[1.0], 1, 1, &UNIT, &bad).is_err());
    }
}

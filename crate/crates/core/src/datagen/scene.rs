//! Seeded box-and-plane rooms rendered through a pinhole camera.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Camera, NetworkSpec, SceneSample, VoxelGrid};

/// Downsampling factor between the rendered volume and the label grid.
pub const LABEL_STRIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    /// `[height, width]`.
    pub image: [usize; 2],
    pub camera: Camera,
    /// Full-resolution volume; labels are stored at `extents / 4`.
    pub grid: VoxelGrid,
    /// Classes including empty; label `class_count` is empty space.
    pub class_count: usize,
    /// Boxes per scene.
    pub boxes: usize,
    /// Upper bound on planes per scene: floor first, then up to two walls.
    pub planes: usize,
}

impl SyntheticSceneSpec {
    pub fn for_network(spec: &NetworkSpec) -> Self {
        SyntheticSceneSpec {
            image: spec.image,
            camera: spec.camera,
            grid: spec.grid,
            class_count: spec.class_count,
            boxes: 3,
            planes: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.grid.extents.iter().any(|e| e % LABEL_STRIDE != 0) {
            return Err(Error::Config(format!(
                "grid extents {:?} must be divisible by {LABEL_STRIDE}",
                self.grid.extents
            )));
        }
        if !(2..=255).contains(&self.class_count) {
            return Err(Error::Config(format!(
                "class_count must be in [2, 255], got {}",
                self.class_count
            )));
        }
        if self.image.contains(&0) {
            return Err(Error::Config("image extents must be positive".into()));
        }
        if self.planes > 3 {
            return Err(Error::Config(format!("at most 3 planes, got {}", self.planes)));
        }
        Ok(())
    }

    pub fn label_extents(&self) -> [usize; 3] {
        self.grid.extents.map(|e| e / LABEL_STRIDE)
    }

    pub fn empty_label(&self) -> u8 {
        self.class_count as u8
    }
}

/// Voxel-aligned box `[lo, hi)` in full-resolution grid coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Primitive {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub class: u8,
}

impl Primitive {
    fn bounds(&self, grid: &VoxelGrid) -> ([f64; 3], [f64; 3]) {
        let min = std::array::from_fn(|a| grid.origin[a] + self.lo[a] as f64 * grid.voxel_size);
        let max = std::array::from_fn(|a| grid.origin[a] + self.hi[a] as f64 * grid.voxel_size);
        (min, max)
    }

    /// Entry distance of the ray `t · dir` (t > 0), if it hits.
    pub fn intersect(&self, grid: &VoxelGrid, dir: [f64; 3]) -> Option<f64> {
        let (min, max) = self.bounds(grid);
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if 0.0 < min[a] || 0.0 > max[a] {
                    return None;
                }
                continue;
            }
            let (mut near, mut far) = (min[a] / dir[a], max[a] / dir[a]);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
        }
        (t0 <= t1 && t0 > 0.0).then_some(t0)
    }
}

/// A generated scene plus the full-resolution volume it was rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub sample: SceneSample,
    pub full_labels: Vec<u8>,
    pub primitives: Vec<Primitive>,
}

/// Colour of a class, away from 0 and 1 so noise does not clip much.
pub fn class_color(class: u8) -> [f32; 3] {
    let c = class as f32;
    [0.15 + 0.7 * (c * 0.37).fract(), 0.15 + 0.7 * (c * 0.61).fract(), 0.15 + 0.7 * (c * 0.83).fract()]
}

const COLOR_NOISE: f32 = 0.05;
/// Smallest box side in full-resolution voxels: one label-grid cell.
const MIN_BOX: usize = LABEL_STRIDE;

pub fn generate_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<SceneSample> {
    Ok(generate_scene_full(spec, seed)?.sample)
}

pub fn generate_scene_full(spec: &SyntheticSceneSpec, seed: u64) -> Result<GeneratedScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let primitives = place_primitives(spec, seed, &mut rng);
    let [ex, ey, ez] = spec.grid.extents;
    let mut full = vec![spec.empty_label(); ex * ey * ez];
    for p in &primitives {
        for x in p.lo[0]..p.hi[0] {
            for y in p.lo[1]..p.hi[1] {
                for z in p.lo[2]..p.hi[2] {
                    full[(x * ey + y) * ez + z] = p.class;
                }
            }
        }
    }
    let [h, w] = spec.image;
    let mut depth = vec![0f32; h * w];
    let mut rgb = vec![0f32; 3 * h * w];
    for v in 0..h {
        for u in 0..w {
            let dir = spec.camera.ray(u as f64, v as f64);
            let hit = primitives
                .iter()
                .filter_map(|p| p.intersect(&spec.grid, dir).map(|t| (t, p.class)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let i = v * w + u;
            let color = match hit {
                Some((t, class)) => {
                    depth[i] = t as f32;
                    class_color(class)
                }
                None => [0.0; 3],
            };
            for (c, base) in color.iter().enumerate() {
                let noise = rng.gen_range(-COLOR_NOISE..=COLOR_NOISE);
                rgb[3 * i + c] = (base + noise).clamp(0.0, 1.0);
            }
        }
    }
    let labels = downsample_labels(&full, spec.grid.extents, spec.class_count);
    Ok(GeneratedScene {
        sample: SceneSample {
            image: spec.image,
            depth,
            rgb,
            extents: spec.label_extents(),
            labels,
            weights: None,
        },
        full_labels: full,
        primitives,
    })
}

fn place_primitives(spec: &SyntheticSceneSpec, seed: u64, rng: &mut ChaCha8Rng) -> Vec<Primitive> {
    let [ex, ey, ez] = spec.grid.extents;
    let semantic = spec.class_count - 1;
    let clamp = |c: usize| c.min(semantic) as u8;
    let mut out = Vec::new();
    let floor = spec.planes >= 1;
    if floor {
        out.push(Primitive {
            lo: [0, ey - 1, 0],
            hi: [ex, ey, ez],
            class: clamp(1),
        });
        let walls = if spec.planes >= 2 {
            rng.gen_range(1..=(spec.planes - 1).min(2))
        } else {
            0
        };
        if walls >= 1 {
            out.push(Primitive {
                lo: [0, 0, ez - 1],
                hi: [ex, ey, ez],
                class: clamp(2),
            });
        }
        if walls >= 2 {
            let x = if rng.gen_bool(0.5) { 0 } else { ex - 1 };
            out.push(Primitive {
                lo: [x, 0, 0],
                hi: [x + 1, ey, ez],
                class: clamp(2),
            });
        }
    }
    if spec.boxes == 0 {
        return out;
    }
    // Box classes walk the pool from a seed-dependent offset, so consecutive
    // seeds cover every class.
    let pool: Vec<u8> = if semantic >= 3 {
        (3..=semantic).map(|c| c as u8).collect()
    } else {
        (1..=semantic).map(|c| c as u8).collect()
    };
    let offset = (seed as usize).wrapping_mul(spec.boxes) % pool.len();
    let top = if floor { ey - 1 } else { ey };
    let side = |avail: usize, rng: &mut ChaCha8Rng, div: usize| {
        let lo = MIN_BOX.min(avail).max(1);
        let hi = (avail / div).max(lo);
        rng.gen_range(lo..=hi)
    };
    let mut placed: Vec<Primitive> = Vec::new();
    for j in 0..spec.boxes {
        let class = pool[(offset + j) % pool.len()];
        let mut candidate = None;
        for _ in 0..32 {
            let sx = side(ex.saturating_sub(2).max(1), rng, 3);
            let sy = side(top.max(1), rng, 2);
            let sz = side(ez.saturating_sub(2).max(1), rng, 3);
            let x0 = rng.gen_range(1.min(ex - sx)..=ex.saturating_sub(sx + 1).max(1.min(ex - sx)));
            let z0 = rng.gen_range(1.min(ez - sz)..=ez.saturating_sub(sz + 1).max(1.min(ez - sz)));
            let b = Primitive {
                lo: [x0, top.saturating_sub(sy), z0],
                hi: [x0 + sx, top, z0 + sz],
                class,
            };
            let clear = placed.iter().all(|p| {
                b.lo[0] > p.hi[0] || p.lo[0] > b.hi[0] || b.lo[2] > p.hi[2] || p.lo[2] > b.hi[2]
            });
            candidate = Some(b);
            if clear {
                break;
            }
        }
        placed.push(candidate.expect("at least one attempt"));
    }
    out.extend(placed);
    out
}

/// Block-wise label reduction: the most frequent occupied class in each block
/// (lowest class on ties), or empty when the block has no occupied voxel.
pub fn downsample_labels(full: &[u8], extents: [usize; 3], class_count: usize) -> Vec<u8> {
    let s = LABEL_STRIDE;
    let [_, ey, ez] = extents;
    let [ox, oy, oz] = extents.map(|e| e / s);
    let mut out = vec![class_count as u8; ox * oy * oz];
    let mut counts = vec![0usize; class_count + 1];
    for x in 0..ox {
        for y in 0..oy {
            for z in 0..oz {
                counts.iter_mut().for_each(|c| *c = 0);
                for dx in 0..s {
                    for dy in 0..s {
                        for dz in 0..s {
                            let l = full[((x * s + dx) * ey + y * s + dy) * ez + z * s + dz] as usize;
                            counts[l] += 1;
                        }
                    }
                }
                let best = (1..class_count).filter(|&c| counts[c] > 0).max_by(|&a, &b| {
                    counts[a].cmp(&counts[b]).then(b.cmp(&a))
                });
                if let Some(c) = best {
                    out[(x * oy + y) * oz + z] = c as u8;
                }
            }
        }
    }
    out
}

/// Fraction of valid depth pixels whose back-projection lands in an occupied
/// full-resolution voxel or one face-adjacent to it. 1 when no pixel is valid.
pub fn depth_consistency(spec: &SyntheticSceneSpec, depth: &[f32], full_labels: &[u8]) -> f64 {
    let [h, w] = spec.image;
    let g = &spec.grid;
    let empty = spec.empty_label();
    let occupied = |idx: [i64; 3]| {
        if (0..3).any(|a| idx[a] < 0 || idx[a] >= g.extents[a] as i64) {
            return false;
        }
        full_labels[g.flat(idx.map(|v| v as usize))] != empty
    };
    let mut valid = 0usize;
    let mut good = 0usize;
    for v in 0..h {
        for u in 0..w {
            let d = depth[v * w + u];
            if d <= 0.0 {
                continue;
            }
            valid += 1;
            let p = spec.camera.back_project(u as f64, v as f64, d as f64);
            let base: [i64; 3] = std::array::from_fn(|a| ((p[a] - g.origin[a]) / g.voxel_size).floor() as i64);
            let mut hit = occupied(base);
            for a in 0..3 {
                for off in [-1, 1] {
                    let mut n = base;
                    n[a] += off;
                    hit |= occupied(n);
                }
            }
            good += hit as usize;
        }
    }
    if valid == 0 {
        1.0
    } else {
        good as f64 / valid as f64
    }
}

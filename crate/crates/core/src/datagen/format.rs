//! The SSCD dataset container.
//!
//! ```text
//! magic        b"SSCD"
//! version      u16                 (currently 1)
//! count        u32                 number of samples
//! header:
//!   image      u32 height, u32 width
//!   camera     f64 fx, fy, cx, cy
//!   grid       f64 origin x, y, z; f64 voxel_size; u32 extents x, y, z
//!   classes    u16 class_count (label class_count = empty)
//! per sample:
//!   dims       u32 height, u32 width, u32 label extents x, y, z
//!   flags      u8                  bit 0: weights present
//!   depth      height·width f32    row-major, 0 = missing
//!   rgb        height·width·3 f32  row-major, interleaved
//!   labels     x·y·z u8            x-major
//!   weights    x·y·z f32           only when flagged
//! ```
//! All integers and floats are little-endian. A JSON sidecar `<file>.json`
//! repeats the header in readable form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::network::spec::data_signature;
use crate::network::{Camera, SceneSample, VoxelGrid};

use super::scene::SyntheticSceneSpec;

pub const DATASET_MAGIC: [u8; 4] = *b"SSCD";
pub const DATASET_VERSION: u16 = 1;

/// Acquisition geometry shared by every sample of a file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub image: [usize; 2],
    pub camera: Camera,
    pub grid: VoxelGrid,
    pub class_count: usize,
}

impl DatasetHeader {
    pub fn from_scene_spec(spec: &SyntheticSceneSpec) -> Self {
        DatasetHeader {
            image: spec.image,
            camera: spec.camera,
            grid: spec.grid,
            class_count: spec.class_count,
        }
    }

    /// Same value as `NetworkSpec::data_hash` for a compatible network.
    pub fn data_hash(&self) -> String {
        data_signature(self.image, &self.grid, &self.camera, self.class_count)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<SceneSample>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    format: &'static str,
    version: u16,
    samples: usize,
    data_hash: String,
    header: &'a DatasetHeader,
}

impl Dataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let mut w = ByteWriter::new();
        w.bytes(&DATASET_MAGIC);
        w.u16(DATASET_VERSION);
        w.u32(self.samples.len() as u32);
        w.u32(h.image[0] as u32);
        w.u32(h.image[1] as u32);
        for v in [h.camera.fx, h.camera.fy, h.camera.cx, h.camera.cy] {
            w.f64(v);
        }
        for v in h.grid.origin {
            w.f64(v);
        }
        w.f64(h.grid.voxel_size);
        for e in h.grid.extents {
            w.u32(e as u32);
        }
        w.u16(h.class_count as u16);
        for (i, s) in self.samples.iter().enumerate() {
            s.validate(h.class_count).map_err(|e| Error::Config(format!("sample {i}: {e}")))?;
            if s.image != h.image {
                return Err(Error::Config(format!(
                    "sample {i}: image {:?} differs from header {:?}",
                    s.image, h.image
                )));
            }
            w.u32(s.image[0] as u32);
            w.u32(s.image[1] as u32);
            for e in s.extents {
                w.u32(e as u32);
            }
            w.u8(s.weights.is_some() as u8);
            w.f32s(s.depth.iter().copied());
            w.f32s(s.rgb.iter().copied());
            w.bytes(&s.labels);
            if let Some(weights) = &s.weights {
                w.f32s(weights.iter().copied());
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.array::<4>("magic")?;
        if magic != DATASET_MAGIC {
            return Err(Error::BadMagic {
                expected: DATASET_MAGIC,
                found: magic,
            });
        }
        let version = r.u16("version")?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                expected: DATASET_VERSION,
                found: version,
            });
        }
        let count = r.u32("sample count")? as usize;
        let image = [r.u32("header image")? as usize, r.u32("header image")? as usize];
        let mut cam = [0f64; 4];
        for v in &mut cam {
            *v = r.f64("header camera")?;
        }
        let mut origin = [0f64; 3];
        for v in &mut origin {
            *v = r.f64("header grid")?;
        }
        let voxel_size = r.f64("header grid")?;
        let mut extents = [0usize; 3];
        for e in &mut extents {
            *e = r.u32("header grid")? as usize;
        }
        let class_count = r.u16("header classes")? as usize;
        let header = DatasetHeader {
            image,
            camera: Camera {
                fx: cam[0],
                fy: cam[1],
                cx: cam[2],
                cy: cam[3],
            },
            grid: VoxelGrid {
                origin,
                voxel_size,
                extents,
            },
            class_count,
        };
        let mut samples = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let section = |part: &str| format!("sample {i} {part}");
            let at = r.offset();
            let image = [r.u32(&section("dims"))? as usize, r.u32(&section("dims"))? as usize];
            let mut extents = [0usize; 3];
            for e in &mut extents {
                *e = r.u32(&section("dims"))? as usize;
            }
            let flags = r.u8(&section("flags"))?;
            if flags > 1 {
                return Err(r.corrupt(format!("sample {i}: unknown flags {flags:#04x}")));
            }
            let pixels = image[0]
                .checked_mul(image[1])
                .ok_or_else(|| r.corrupt(format!("sample {i}: image dims overflow")))?;
            let voxels = extents
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| r.corrupt(format!("sample {i}: grid dims overflow")))?;
            let depth = r.f32s(pixels, &section("depth"))?;
            let rgb = r.f32s(3 * pixels, &section("rgb"))?;
            let labels = r.take(voxels, &section("labels"))?.to_vec();
            let weights = if flags & 1 == 1 {
                Some(r.f32s(voxels, &section("weights"))?)
            } else {
                None
            };
            let sample = SceneSample {
                image,
                depth,
                rgb,
                extents,
                labels,
                weights,
            };
            sample.validate(class_count).map_err(|e| Error::Corrupt {
                offset: at,
                detail: format!("sample {i}: {e}"),
            })?;
            samples.push(sample);
        }
        r.expect_end()?;
        Ok(Dataset { header, samples })
    }

    /// Writes the container and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let sidecar = Sidecar {
            format: "SSCD",
            version: DATASET_VERSION,
            samples: self.samples.len(),
            data_hash: self.header.data_hash(),
            header: &self.header,
        };
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        let side = sidecar_path(path);
        std::fs::write(&side, text + "\n").map_err(|e| Error::io(side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Voxel count per label `1..=class_count` over all samples.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.header.class_count];
        for s in &self.samples {
            for &l in &s.labels {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

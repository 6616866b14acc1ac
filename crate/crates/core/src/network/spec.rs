use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aic::{Activation, AicSpec, Modulation};
use crate::error::{Error, Result};
use crate::network::projection::{Camera, VoxelGrid};
use crate::tensor::Axis;

/// Which input branches feed the aggregation stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    #[default]
    DepthRgb,
    DepthOnly,
}

impl Branches {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            Branches::DepthRgb => &["depth", "rgb"],
            Branches::DepthOnly => &["depth"],
        }
    }
}

/// Channel widths of one hybrid 2D/3D feature extractor branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorSpec {
    /// Width after the stem PWConv and the 2D DDR blocks.
    pub stem: usize,
    /// Width after the first down-sample.
    pub mid: usize,
    /// Width after the second down-sample; also the aggregation stage width.
    pub out: usize,
    /// Kernel of the decomposed residual (DDR stand-in) blocks.
    pub ddr_kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationSpec {
    pub stages: usize,
    pub modules_per_stage: usize,
    pub bottleneck: usize,
    pub kernel_sizes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSpec {
    pub modules: usize,
    pub bottleneck: usize,
    pub kernel_sizes: Vec<usize>,
}

/// Full network description: geometry, channel plan and module configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Input image `[height, width]`.
    pub image: [usize; 2],
    /// Classes including the trailing "empty" class.
    pub class_count: usize,
    pub branches: Branches,
    pub camera: Camera,
    /// Input voxel grid; outputs are `extents / 4`.
    pub grid: VoxelGrid,
    pub extractor: ExtractorSpec,
    pub aggregation: AggregationSpec,
    pub fusion: FusionSpec,
    /// Widths of the hidden reconstruction PWConvs.
    pub head: Vec<usize>,
    pub modulation: Modulation,
    pub activation: Activation,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::full()
    }
}

impl NetworkSpec {
    /// Full-resolution configuration: 640×480 images, 240×144×240 grid,
    /// extractor 8→16→64, three stages of two AIC (D=64, D′=32), two fusion
    /// AIC (D=256, D′=64), kernel set {3,5,7}, head 256→128→128→12.
    pub fn full() -> Self {
        NetworkSpec {
            image: [480, 640],
            class_count: 12,
            branches: Branches::DepthRgb,
            camera: Camera {
                fx: 518.8,
                fy: 518.8,
                cx: 320.0,
                cy: 240.0,
            },
            grid: VoxelGrid {
                origin: [-2.4, -1.44, 0.5],
                voxel_size: 0.02,
                extents: [240, 144, 240],
            },
            extractor: ExtractorSpec {
                stem: 8,
                mid: 16,
                out: 64,
                ddr_kernel: 3,
            },
            aggregation: AggregationSpec {
                stages: 3,
                modules_per_stage: 2,
                bottleneck: 32,
                kernel_sizes: vec![3, 5, 7],
            },
            fusion: FusionSpec {
                modules: 2,
                bottleneck: 64,
                kernel_sizes: vec![3, 5, 7],
            },
            head: vec![128, 128],
            modulation: Modulation::Softmax,
            activation: Activation::Relu,
        }
    }

    /// Desk-scale configuration: 48×64 images, 32×16×32 grid (8×4×8 output),
    /// same layer structure with thinner channels.
    pub fn toy() -> Self {
        NetworkSpec {
            image: [48, 64],
            camera: Camera {
                fx: 51.88,
                fy: 51.88,
                cx: 32.0,
                cy: 24.0,
            },
            grid: VoxelGrid {
                origin: [-2.4, -1.2, 0.4],
                voxel_size: 0.15,
                extents: [32, 16, 32],
            },
            extractor: ExtractorSpec {
                stem: 4,
                mid: 8,
                out: 16,
                ddr_kernel: 3,
            },
            aggregation: AggregationSpec {
                stages: 3,
                modules_per_stage: 2,
                bottleneck: 8,
                kernel_sizes: vec![3, 5, 7],
            },
            fusion: FusionSpec {
                modules: 2,
                bottleneck: 16,
                kernel_sizes: vec![3, 5, 7],
            },
            head: vec![32, 32],
            ..Self::full()
        }
    }

    /// Gradient-check configuration: one stage, 8 channels, 8×4×8 grid.
    pub fn miniature() -> Self {
        NetworkSpec {
            image: [6, 8],
            class_count: 4,
            camera: Camera {
                fx: 6.0,
                fy: 6.0,
                cx: 4.0,
                cy: 3.0,
            },
            grid: VoxelGrid {
                origin: [-1.2, -0.6, 0.4],
                voxel_size: 0.3,
                extents: [8, 4, 8],
            },
            extractor: ExtractorSpec {
                stem: 2,
                mid: 4,
                out: 8,
                ddr_kernel: 3,
            },
            aggregation: AggregationSpec {
                stages: 1,
                modules_per_stage: 2,
                bottleneck: 4,
                kernel_sizes: vec![3, 5],
            },
            fusion: FusionSpec {
                modules: 1,
                bottleneck: 4,
                kernel_sizes: vec![3, 5],
            },
            head: vec![8],
            ..Self::full()
        }
    }

    pub fn with_kernel_sizes(mut self, kernel_sizes: &[usize]) -> Self {
        self.aggregation.kernel_sizes = kernel_sizes.to_vec();
        self.fusion.kernel_sizes = kernel_sizes.to_vec();
        self
    }

    /// Output grid extents (input extents / 4).
    pub fn output_extents(&self) -> [usize; 3] {
        self.grid.extents.map(|e| e / 4)
    }

    pub fn mid_extents(&self) -> [usize; 3] {
        self.grid.extents.map(|e| e / 2)
    }

    pub fn stage_channels(&self) -> usize {
        self.extractor.out
    }

    /// Width after concatenating the fused input and every stage output.
    pub fn fusion_channels(&self) -> usize {
        (self.aggregation.stages + 1) * self.stage_channels()
    }

    /// Number of input channels for a branch (depth: 1, rgb: 3).
    pub fn branch_inputs(branch: &str) -> usize {
        if branch == "rgb" {
            3
        } else {
            1
        }
    }

    pub fn ddr2d_spec(&self) -> AicSpec {
        AicSpec::decomposed(self.extractor.stem, &[Axis::X, Axis::Y], self.extractor.ddr_kernel)
            .with_activation(self.activation)
    }

    pub fn ddr3d_spec(&self, channels: usize) -> AicSpec {
        AicSpec::decomposed(channels, &Axis::ALL, self.extractor.ddr_kernel).with_activation(self.activation)
    }

    pub fn aggregation_aic(&self) -> AicSpec {
        AicSpec::uniform(
            self.stage_channels(),
            Some(self.aggregation.bottleneck),
            &self.aggregation.kernel_sizes,
        )
        .with_modulation(self.modulation)
        .with_activation(self.activation)
    }

    pub fn fusion_aic(&self) -> AicSpec {
        AicSpec::uniform(
            self.fusion_channels(),
            Some(self.fusion.bottleneck),
            &self.fusion.kernel_sizes,
        )
        .with_modulation(self.modulation)
        .with_activation(self.activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Config(format!(
                "class_count must be ≥ 2, got {}",
                self.class_count
            )));
        }
        if self.class_count > 255 {
            return Err(Error::Config("class_count must fit in a byte".into()));
        }
        self.grid.validate()?;
        if self.grid.extents.iter().any(|e| e % 4 != 0) {
            return Err(Error::Config(format!(
                "grid extents {:?} must be divisible by 4",
                self.grid.extents
            )));
        }
        if self.image.contains(&0) {
            return Err(Error::Config("image extents must be positive".into()));
        }
        let e = &self.extractor;
        if e.stem == 0 || e.mid <= e.stem || e.out <= e.mid {
            return Err(Error::Config(format!(
                "extractor widths must satisfy 0 < stem < mid < out, got {} / {} / {}",
                e.stem, e.mid, e.out
            )));
        }
        if e.ddr_kernel.is_multiple_of(2) {
            return Err(Error::EvenKernel { size: e.ddr_kernel });
        }
        if self.aggregation.stages == 0 || self.aggregation.modules_per_stage == 0 {
            return Err(Error::Config("aggregation needs at least one stage and module".into()));
        }
        if self.head.contains(&0) {
            return Err(Error::Config("head widths must be positive".into()));
        }
        self.ddr2d_spec().validate()?;
        self.aggregation_aic().validate()?;
        if self.fusion.modules > 0 {
            self.fusion_aic().validate()?;
        }
        Ok(())
    }

    /// Hash of everything a dataset must agree with: image size, grid geometry,
    /// camera and class count.
    pub fn data_hash(&self) -> String {
        data_signature(self.image, &self.grid, &self.camera, self.class_count)
    }

    /// Hash of the complete spec.
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: NetworkSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

pub fn data_signature(image: [usize; 2], grid: &VoxelGrid, camera: &Camera, classes: usize) -> String {
    let text = format!(
        "image={}x{};grid={:?};origin={:?};voxel={};camera={},{},{},{};classes={}",
        image[0],
        image[1],
        grid.extents,
        grid.origin.map(|v| v as f32),
        grid.voxel_size as f32,
        camera.fx as f32,
        camera.fy as f32,
        camera.cx as f32,
        camera.cy as f32,
        classes
    );
    hex(&Sha256::digest(text.as_bytes()))[..16].to_string()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Table-level grouping of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    FeatureExtractor,
    FeatureFusion,
    Reconstruction,
}

impl Section {
    pub fn name(self) -> &'static str {
        match self {
            Section::FeatureExtractor => "Feature Extractor",
            Section::FeatureFusion => "Feature Fusion",
            Section::Reconstruction => "Reconstruction",
        }
    }
}

/// One row of the layer-by-layer architecture listing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRow {
    pub section: Section,
    /// Branch name for extractor rows.
    pub branch: Option<&'static str>,
    pub operation: &'static str,
    /// Channels followed by spatial extents (2 for images, 3 for volumes).
    pub output: Vec<usize>,
    pub kernel: String,
    pub stride: usize,
}

impl LayerRow {
    pub fn label(&self) -> String {
        match self.branch {
            Some(b) => format!("{}/{}", b, self.operation),
            None => self.operation.to_string(),
        }
    }
}

impl NetworkSpec {
    /// Rows of the architecture table this spec executes, in order.
    pub fn layer_plan(&self) -> Vec<LayerRow> {
        let mut rows = Vec::new();
        let [h, w] = self.image;
        let full = self.grid.extents;
        let mid = self.mid_extents();
        let out = self.output_extents();
        let e = &self.extractor;
        let ddr = e.ddr_kernel.to_string();
        let vol = |c: usize, s: [usize; 3]| vec![c, s[0], s[1], s[2]];
        for &branch in self.branches.names() {
            let b = Some(branch);
            let row = |operation, output, kernel: &str, stride| LayerRow {
                section: Section::FeatureExtractor,
                branch: b,
                operation,
                output,
                kernel: kernel.to_string(),
                stride,
            };
            rows.push(row("PWConv", vec![e.stem, h, w], "1", 1));
            rows.push(row("2D DDR", vec![e.stem, h, w], &ddr, 1));
            rows.push(row("2D DDR", vec![e.stem, h, w], &ddr, 1));
            rows.push(row("2D-3D Projection", vol(e.stem, full), "-", 1));
            rows.push(row("Down-sample", vol(e.mid, mid), "3", 2));
            rows.push(row("3D DDR", vol(e.mid, mid), &ddr, 1));
            rows.push(row("Down-sample", vol(e.out, out), "3", 2));
            rows.push(row("3D DDR", vol(e.out, out), &ddr, 1));
        }
        let c = self.stage_channels();
        let set = |ks: &[usize]| {
            format!(
                "{{{}}}",
                ks.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            )
        };
        let fusion_row = |operation, output, kernel: String| LayerRow {
            section: Section::FeatureFusion,
            branch: None,
            operation,
            output,
            kernel,
            stride: 1,
        };
        rows.push(fusion_row("Add", vol(c, out), "-".into()));
        for _ in 0..self.aggregation.stages {
            let op = if self.aggregation.modules_per_stage == 2 {
                "AIC ×2"
            } else {
                "AIC stack"
            };
            rows.push(fusion_row(op, vol(c, out), set(&self.aggregation.kernel_sizes)));
            rows.push(fusion_row("Add", vol(c, out), "-".into()));
        }
        rows.push(fusion_row("Concatenate", vol(self.fusion_channels(), out), "-".into()));
        for _ in 0..self.fusion.modules {
            rows.push(fusion_row(
                "AIC",
                vol(self.fusion_channels(), out),
                set(&self.fusion.kernel_sizes),
            ));
        }
        for &width in self.head.iter().chain(std::iter::once(&self.class_count)) {
            rows.push(LayerRow {
                section: Section::Reconstruction,
                branch: None,
                operation: "PWConv",
                output: vol(width, out),
                kernel: "1".into(),
                stride: 1,
            });
        }
        rows.push(LayerRow {
            section: Section::Reconstruction,
            branch: None,
            operation: "ArgMax",
            output: vol(self.class_count, out),
            kernel: "-".into(),
            stride: 1,
        });
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for spec in [NetworkSpec::full(), NetworkSpec::toy(), NetworkSpec::miniature()] {
            spec.validate().unwrap();
        }
    }

    #[test]
    fn full_plan_matches_architecture_table() {
        let spec = NetworkSpec::full();
        let rows = spec.layer_plan();
        let depth: Vec<_> = rows.iter().filter(|r| r.branch == Some("depth")).collect();
        assert_eq!(depth.len(), 8);
        assert_eq!(depth[0].output, vec![8, 480, 640]);
        assert_eq!(depth[3].output, vec![8, 240, 144, 240]);
        assert_eq!(depth[4].output, vec![16, 120, 72, 120]);
        assert_eq!(depth[7].output, vec![64, 60, 36, 60]);
        let concat = rows.iter().find(|r| r.operation == "Concatenate").unwrap();
        assert_eq!(concat.output, vec![256, 60, 36, 60]);
        assert_eq!(spec.fusion_channels(), 4 * spec.stage_channels());
        let last_conv = rows.iter().rev().find(|r| r.operation == "PWConv").unwrap();
        assert_eq!(last_conv.output, vec![12, 60, 36, 60]);
        // extractor ×2 + (Add, [AIC×2, Add]×3, Concat, AIC, AIC) + PWConv×3 + ArgMax
        assert_eq!(rows.len(), 16 + 10 + 4);
    }

    #[test]
    fn toy_output_extents() {
        let spec = NetworkSpec::toy();
        assert_eq!(spec.output_extents(), [8, 4, 8]);
        let rows = spec.layer_plan();
        let last_extractor = rows.iter().rfind(|r| r.branch.is_some()).unwrap();
        assert_eq!(last_extractor.output, vec![16, 8, 4, 8]);
    }

    #[test]
    fn validation_errors() {
        let mut s = NetworkSpec::toy();
        s.class_count = 1;
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::toy();
        s.grid.extents = [30, 16, 32];
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::toy();
        s.extractor.mid = s.extractor.stem;
        assert!(s.validate().is_err());
        let s = NetworkSpec::toy().with_kernel_sizes(&[4]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let spec = NetworkSpec::toy();
        let text = spec.to_toml();
        assert_eq!(NetworkSpec::from_toml(&text).unwrap(), spec);
        let bad = format!("bogus = 1\n{text}");
        assert!(NetworkSpec::from_toml(&bad).is_err());
    }

    #[test]
    fn hashes_are_stable_and_sensitive() {
        let a = NetworkSpec::toy();
        let mut b = a.clone();
        assert_eq!(a.spec_hash(), b.spec_hash());
        b.head = vec![16, 16];
        assert_ne!(a.spec_hash(), b.spec_hash());
        assert_eq!(a.data_hash(), b.data_hash());
        b.grid.voxel_size = 0.2;
        assert_ne!(a.data_hash(), b.data_hash());
    }
}

//! Run configuration file (TOML).
//!
//! ```toml
//! seed = 0                 # default 0
//! precision = "f32"        # "f32" | "f64", default "f32"
//!
//! [paths]                  # all optional; CLI flags take precedence
//! dataset = "scenes.sscd"
//! checkpoint = "run/final.ckpt"
//! report = "metrics.txt"
//!
//! [network]
//! preset = "full"          # "full" | "toy" | "miniature", default "full"
//! kernel_sizes = [3, 5, 7] # aggregation and fusion kernel set, default from preset
//! modulation = "softmax"   # "softmax" | "ones", default "softmax"
//! activation = "relu"      # "relu" | "none", default "relu"
//! branches = "depth_rgb"   # "depth_rgb" | "depth_only", default "depth_rgb"
//!
//! [train]                  # defaults: lr 0.01, momentum 0.9, weight_decay 1e-4,
//! epochs = 30              # lr_decay_factor 10, lr_decay_every 15, batch_size 4,
//!                          # epochs 30, class_weights "uniform", empty_ratio 2,
//!                          # checkpoint_every 0
//!
//! [data]
//! scenes = 4               # default 4
//! boxes = 3                # boxes per scene, default 3
//! planes = 3               # max planes per scene (floor + walls), default 3
//! ```
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aic::{Activation, Modulation};
use crate::datagen::SyntheticSceneSpec;
use crate::error::{Error, Result};
use crate::network::{Branches, NetworkSpec};
use crate::tensor::Precision;
use crate::training::{TrainConfig, WeightMode};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Full,
    Toy,
    Miniature,
}

impl Preset {
    pub fn spec(self) -> NetworkSpec {
        match self {
            Preset::Full => NetworkSpec::full(),
            Preset::Toy => NetworkSpec::toy(),
            Preset::Miniature => NetworkSpec::miniature(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub preset: Preset,
    pub kernel_sizes: Option<Vec<usize>>,
    pub modulation: Option<Modulation>,
    pub activation: Option<Activation>,
    pub branches: Option<Branches>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub lr_decay_factor: Option<f64>,
    pub lr_decay_every: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub class_weights: Option<WeightMode>,
    pub empty_ratio: Option<f64>,
    pub checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub scenes: usize,
    pub boxes: usize,
    pub planes: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            scenes: 4,
            boxes: 3,
            planes: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub paths: Paths,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub data: DataSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.network_spec()?;
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let n = &self.network;
        let mut spec = n.preset.spec();
        if let Some(ks) = &n.kernel_sizes {
            spec = spec.with_kernel_sizes(ks);
        }
        if let Some(m) = n.modulation {
            spec.modulation = m;
        }
        if let Some(a) = n.activation {
            spec.activation = a;
        }
        if let Some(b) = n.branches {
            spec.branches = b;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let d = TrainConfig::default();
        TrainConfig {
            lr: t.lr.unwrap_or(d.lr),
            momentum: t.momentum.unwrap_or(d.momentum),
            weight_decay: t.weight_decay.unwrap_or(d.weight_decay),
            lr_decay_factor: t.lr_decay_factor.unwrap_or(d.lr_decay_factor),
            lr_decay_every: t.lr_decay_every.unwrap_or(d.lr_decay_every),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            epochs: t.epochs.unwrap_or(d.epochs),
            seed: self.seed,
            precision: self.precision,
            class_weights: t.class_weights.unwrap_or(d.class_weights),
            empty_ratio: t.empty_ratio.unwrap_or(d.empty_ratio),
            checkpoint_every: t.checkpoint_every.unwrap_or(d.checkpoint_every),
        }
    }

    pub fn scene_spec(&self) -> Result<SyntheticSceneSpec> {
        let mut s = SyntheticSceneSpec::for_network(&self.network_spec()?);
        s.boxes = self.data.boxes;
        s.planes = self.data.planes;
        s.validate()?;
        Ok(s)
    }
}

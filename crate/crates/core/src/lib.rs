//! Anisotropic convolution (AIC) for 3D semantic scene completion: a small
//! reverse-mode tensor engine, the AIC operator, the AIC-Net pipeline, training,
//! evaluation, synthetic data and cost analysis.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aic;
pub mod analysis;
pub mod binio;
pub mod config;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod network;
pub mod params;
pub mod tensor;
pub mod training;

pub use aic::{Activation, AicModule, AicSpec, BankSpec, Modulation};
pub use analysis::{network_cost, receptive_field_range, CostOptions, CostReport, RfRange};
pub use config::RunConfig;
pub use datagen::{generate_scene, Dataset, DatasetHeader, SyntheticSceneSpec};
pub use error::{Error, Result};
pub use evaluation::{sc_metrics, ssc_iou, MetricsReport, ScMetrics};
pub use graph::{Graph, OpKind, Var};
pub use network::{AicNet, Camera, NetworkSpec, SceneSample, VoxelGrid};
pub use params::{Binder, ParamStore};
pub use tensor::{Axis, LabelGrid, Precision, Scalar, Tensor};
pub use training::{fit, Checkpoint, TrainConfig, WeightMode};

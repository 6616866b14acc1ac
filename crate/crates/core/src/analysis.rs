//! Static cost and receptive-field analysis.
//!
//! FLOP convention: one multiply-accumulate is 2 FLOPs; bias adds, residual
//! adds, ReLU and broadcast multiplies cost 1 FLOP per output element;
//! softmax costs 5 FLOPs per element (max, subtract, exp, sum, divide);
//! 2×2×2 max pooling costs 7 comparisons per output element. Projection,
//! concatenation and channel slicing are memory moves and cost 0.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::Serialize;

use crate::aic::{Activation, AicSpec, Modulation};
use crate::error::{Error, Result};
use crate::network::spec::{NetworkSpec, Section};
use crate::tensor::Axis;

pub const SOFTMAX_FLOPS_PER_ELEMENT: u64 = 5;
pub const MAXPOOL_FLOPS_PER_OUTPUT: u64 = 7;

/// Attainable receptive-field sizes along one axis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RfRange {
    pub axis: Axis,
    pub attainable: Vec<usize>,
    pub min: usize,
    pub max: usize,
}

/// `{1 + Σ_t (k_t − 1) : k_t ∈ set_t}` over a stack of per-module kernel sets.
pub fn receptive_field_range(axis: Axis, stack: &[Vec<usize>]) -> Result<RfRange> {
    if stack.is_empty() {
        return Err(Error::Config("receptive-field stack is empty".into()));
    }
    let mut reach: BTreeSet<usize> = BTreeSet::from([1]);
    for set in stack {
        if set.is_empty() {
            return Err(Error::Config("empty kernel set in stack".into()));
        }
        if let Some(&k) = set.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::EvenKernel { size: k });
        }
        reach = reach
            .iter()
            .flat_map(|&r| set.iter().map(move |&k| r + k - 1))
            .collect();
    }
    let attainable: Vec<usize> = reach.into_iter().collect();
    Ok(RfRange {
        axis,
        min: attainable[0],
        max: *attainable.last().expect("non-empty"),
        attainable,
    })
}

/// Cost of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub label: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub params: u64,
    pub flops: u64,
    pub layers: Vec<LayerCost>,
    /// Weight scalars of dense 3D convolutions that replace AIC modules (0 when not replaced).
    pub replaced_conv_weights: u64,
}

impl CostReport {
    fn from_layers(layers: Vec<LayerCost>, replaced_conv_weights: u64) -> Self {
        CostReport {
            params: layers.iter().map(|l| l.params).sum(),
            flops: layers.iter().map(|l| l.flops).sum(),
            layers,
            replaced_conv_weights,
        }
    }
}

/// Cost-model options.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct CostOptions {
    /// Replace every aggregation and fusion AIC module's axis banks with one
    /// dense `k×k×k` convolution at the inner width.
    pub replace_3dconv: Option<usize>,
    /// Leave bias adds out of the FLOP count.
    pub skip_bias_flops: bool,
}

/// Parameters and FLOPs of a convolution `cin → cout` with `taps` weights per
/// channel pair over `voxels` output positions.
#[derive(Clone, Copy, Debug)]
struct Conv {
    cin: u64,
    cout: u64,
    taps: u64,
}

impl Conv {
    fn params(self) -> u64 {
        self.cout * self.cin * self.taps + self.cout
    }

    fn flops(self, voxels: u64, opts: CostOptions) -> u64 {
        let bias = if opts.skip_bias_flops { 0 } else { self.cout * voxels };
        2 * self.cout * self.cin * self.taps * voxels + bias
    }
}

/// Pointwise convolution cost.
pub fn pointwise_cost(cin: usize, cout: usize, voxels: usize, opts: CostOptions) -> LayerCost {
    let c = Conv {
        cin: cin as u64,
        cout: cout as u64,
        taps: 1,
    };
    LayerCost {
        label: "PWConv".into(),
        params: c.params(),
        flops: c.flops(voxels as u64, opts),
    }
}

/// Dense cubic 3D convolution parameter count (weights + bias).
pub fn dense_conv3d_params(cin: usize, cout: usize, k: usize) -> u64 {
    Conv {
        cin: cin as u64,
        cout: cout as u64,
        taps: (k * k * k) as u64,
    }
    .params()
}

/// Parameters of one axis bank at `channels` with an optional modulation head.
pub fn bank_params(channels: usize, kernel_sizes: &[usize], head: bool) -> u64 {
    let c = channels as u64;
    let theta: u64 = kernel_sizes.iter().map(|&k| c * c * k as u64 + c).sum();
    let phi = if head {
        let n = kernel_sizes.len() as u64;
        n * c + n
    } else {
        0
    };
    theta + phi
}

/// Cost of one AIC module evaluated over `voxels` positions.
pub fn aic_cost(spec: &AicSpec, voxels: usize, opts: CostOptions, replace: Option<usize>) -> LayerCost {
    let v = voxels as u64;
    let d = spec.channels as u64;
    let inner = spec.inner_channels() as u64;
    let mut params = 0;
    let mut flops = 0;
    let add = |c: Conv, params: &mut u64, flops: &mut u64| {
        *params += c.params();
        *flops += c.flops(v, opts);
    };
    if spec.bottleneck.is_some() {
        add(Conv {
            cin: d,
            cout: inner,
            taps: 1,
        }, &mut params, &mut flops);
    }
    match replace {
        Some(k) => add(Conv {
            cin: inner,
            cout: inner,
            taps: (k * k * k) as u64,
        }, &mut params, &mut flops),
        None => {
            let last = spec.banks.len() - 1;
            for (i, bank) in spec.banks.iter().enumerate() {
                let n = bank.kernel_count() as u64;
                for &k in &bank.kernel_sizes {
                    add(Conv {
                        cin: inner,
                        cout: inner,
                        taps: k as u64,
                    }, &mut params, &mut flops);
                }
                if spec.modulation == Modulation::Softmax {
                    add(Conv {
                        cin: inner,
                        cout: n,
                        taps: 1,
                    }, &mut params, &mut flops);
                    flops += SOFTMAX_FLOPS_PER_ELEMENT * n * v;
                    flops += n * inner * v;
                }
                flops += (n - 1) * inner * v;
                if i < last && spec.activation == Activation::Relu {
                    flops += inner * v;
                }
            }
        }
    }
    if spec.bottleneck.is_some() {
        add(Conv {
            cin: inner,
            cout: d,
            taps: 1,
        }, &mut params, &mut flops);
    }
    flops += d * v;
    LayerCost {
        label: "AIC".into(),
        params,
        flops,
    }
}

/// Full-network parameter and FLOP count at the spec's input resolution,
/// one entry per architecture-table row.
pub fn network_cost(spec: &NetworkSpec, opts: CostOptions) -> Result<CostReport> {
    spec.validate()?;
    if let Some(k) = opts.replace_3dconv {
        if k % 2 == 0 || k == 0 {
            return Err(Error::EvenKernel { size: k });
        }
    }
    let relu = spec.activation == Activation::Relu;
    let act = |elements: u64| if relu { elements } else { 0 };
    let pixels = (spec.image[0] * spec.image[1]) as u64;
    let mid: u64 = spec.mid_extents().iter().product::<usize>() as u64;
    let out: u64 = spec.output_extents().iter().product::<usize>() as u64;
    let e = spec.extractor;
    let mut layers = Vec::new();
    let mut replaced = 0u64;
    let mut stage_cursor = 0usize;

    for row in spec.layer_plan() {
        let label = row.label();
        let (params, flops) = match (row.section, row.operation) {
            (Section::FeatureExtractor, "PWConv") => {
                let cin = NetworkSpec::branch_inputs(row.branch.unwrap_or("depth"));
                let c = pointwise_cost(cin, e.stem, pixels as usize, opts);
                (c.params, c.flops + act(e.stem as u64 * pixels))
            }
            (Section::FeatureExtractor, "2D DDR") => {
                let c = aic_cost(&spec.ddr2d_spec(), pixels as usize, opts, None);
                (c.params, c.flops)
            }
            (Section::FeatureExtractor, "2D-3D Projection") => (0, 0),
            (Section::FeatureExtractor, "Down-sample") => {
                let (cin, cout, v) = if row.output[0] == e.mid {
                    (e.stem, e.mid, mid)
                } else {
                    (e.mid, e.out, out)
                };
                let conv = Conv {
                    cin: cin as u64,
                    cout: (cout - cin) as u64,
                    taps: 27,
                };
                let pool = MAXPOOL_FLOPS_PER_OUTPUT * cin as u64 * v;
                (conv.params(), conv.flops(v, opts) + pool + act(cout as u64 * v))
            }
            (Section::FeatureExtractor, _) => {
                let (c, v) = if row.output[0] == e.mid { (e.mid, mid) } else { (e.out, out) };
                let cost = aic_cost(&spec.ddr3d_spec(c), v as usize, opts, None);
                (cost.params, cost.flops)
            }
            (Section::FeatureFusion, "Add") => {
                let adds = if stage_cursor == 0 {
                    spec.branches.names().len() as u64 - 1
                } else {
                    1
                };
                stage_cursor += 1;
                (0, adds * spec.stage_channels() as u64 * out)
            }
            (Section::FeatureFusion, "Concatenate") => (0, 0),
            (Section::FeatureFusion, "AIC") => {
                let c = aic_cost(&spec.fusion_aic(), out as usize, opts, opts.replace_3dconv);
                if let Some(k) = opts.replace_3dconv {
                    replaced += (spec.fusion.bottleneck * spec.fusion.bottleneck * k * k * k) as u64;
                }
                (c.params, c.flops)
            }
            (Section::FeatureFusion, _) => {
                let m = spec.aggregation.modules_per_stage as u64;
                let c = aic_cost(&spec.aggregation_aic(), out as usize, opts, opts.replace_3dconv);
                if let Some(k) = opts.replace_3dconv {
                    let b = spec.aggregation.bottleneck;
                    replaced += m * (b * b * k * k * k) as u64;
                }
                (m * c.params, m * c.flops)
            }
            (Section::Reconstruction, "PWConv") => {
                let idx = layers
                    .iter()
                    .filter(|l: &&LayerCost| l.label == "PWConv")
                    .count();
                let cin = if idx == 0 {
                    spec.fusion_channels()
                } else {
                    spec.head[idx - 1]
                };
                let cout = row.output[0];
                let c = pointwise_cost(cin, cout, out as usize, opts);
                let hidden = idx < spec.head.len();
                (c.params, c.flops + if hidden { act(cout as u64 * out) } else { 0 })
            }
            (Section::Reconstruction, _) => (0, 0),
        };
        layers.push(LayerCost { label, params, flops });
    }
    Ok(CostReport::from_layers(layers, replaced))
}

/// Kernel sets of the AIC modules along the aggregation→fusion path, optionally
/// keeping only the last `depth` modules.
pub fn aic_path(spec: &NetworkSpec, axis: Axis, depth: Option<usize>) -> Vec<Vec<usize>> {
    let pick = |s: &AicSpec| {
        s.banks
            .iter()
            .find(|b| b.axis == axis)
            .map(|b| b.kernel_sizes.clone())
            .unwrap_or_else(|| vec![1])
    };
    let mut path = Vec::new();
    let agg = spec.aggregation_aic();
    for _ in 0..spec.aggregation.stages * spec.aggregation.modules_per_stage {
        path.push(pick(&agg));
    }
    let fusion = spec.fusion_aic();
    for _ in 0..spec.fusion.modules {
        path.push(pick(&fusion));
    }
    match depth {
        Some(d) if d < path.len() => path.split_off(path.len() - d),
        _ => path,
    }
}

impl CostReport {
    /// `key=value` summary lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "params={}", self.params);
        let _ = writeln!(s, "flops={}", self.flops);
        let _ = writeln!(s, "replaced_conv_weights={}", self.replaced_conv_weights);
        s
    }

    /// Aligned per-layer table.
    pub fn table(&self) -> String {
        let width = self.layers.iter().map(|l| l.label.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<3} {:<width$} {:>12} {:>16}", "#", "layer", "params", "flops");
        for (i, l) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "{:<3} {:<width$} {:>12} {:>16}", i, l.label, l.params, l.flops);
        }
        let _ = writeln!(s, "{:<3} {:<width$} {:>12} {:>16}", "", "total", self.params, self.flops);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_of_four_three_five_seven() {
        let stack = vec![vec![3, 5, 7]; 4];
        let rf = receptive_field_range(Axis::X, &stack).unwrap();
        assert_eq!((rf.min, rf.max), (9, 25));
        assert_eq!(rf.attainable, (9..=25).step_by(2).collect::<Vec<_>>());
    }

    #[test]
    fn singleton_and_errors() {
        let rf = receptive_field_range(Axis::Y, &[vec![3]]).unwrap();
        assert_eq!(rf.attainable, vec![3]);
        let rf = receptive_field_range(Axis::Y, &vec![vec![5]; 6]).unwrap();
        assert_eq!(rf.attainable, vec![1 + 6 * 4]);
        assert!(receptive_field_range(Axis::Z, &[]).is_err());
        assert!(receptive_field_range(Axis::Z, &[vec![]]).is_err());
        assert!(receptive_field_range(Axis::Z, &[vec![4]]).is_err());
    }

    #[test]
    fn bank_and_dense_counts() {
        assert_eq!(bank_params(32, &[3, 5, 7], false), 15456);
        assert_eq!(bank_params(32, &[3, 5, 7], true), 15555);
        assert_eq!(dense_conv3d_params(32, 32, 3), 27680);
    }

    #[test]
    fn pointwise_flops_formula() {
        let with_bias = pointwise_cost(2, 3, 10, CostOptions::default());
        assert_eq!(with_bias.flops, 120 + 30);
        let without = pointwise_cost(
            2,
            3,
            10,
            CostOptions {
                skip_bias_flops: true,
                ..Default::default()
            },
        );
        assert_eq!(without.flops, 120);
    }

    #[test]
    fn report_totals_sum_breakdown() {
        let r = network_cost(&NetworkSpec::full(), CostOptions::default()).unwrap();
        assert_eq!(r.params, r.layers.iter().map(|l| l.params).sum::<u64>());
        assert_eq!(r.flops, r.layers.iter().map(|l| l.flops).sum::<u64>());
        assert_eq!(r.layers.len(), NetworkSpec::full().layer_plan().len());
    }

    #[test]
    fn fusion_path_depths() {
        let spec = NetworkSpec::full();
        assert_eq!(aic_path(&spec, Axis::X, None).len(), 8);
        assert_eq!(aic_path(&spec, Axis::X, Some(4)).len(), 4);
    }
}

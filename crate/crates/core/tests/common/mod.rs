//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use aic_core::aic::{Activation, AicSpec, BankSpec, Modulation};
use aic_core::Axis;
use rand::Rng;

/// Same-padded dense 3D cross-correlation of one channel with an odd kernel
/// `[kx, ky, kz]`, written as a plain sextuple loop.
pub fn dense_conv3d_same(x: &[f64], dims: [usize; 3], kernel: &[f64], kdims: [usize; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let [kx, ky, kz] = kdims;
    let (rx, ry, rz) = ((kx / 2) as i64, (ky / 2) as i64, (kz / 2) as i64);
    let mut out = vec![0.0; nx * ny * nz];
    for i in 0..nx as i64 {
        for j in 0..ny as i64 {
            for l in 0..nz as i64 {
                let mut acc = 0.0;
                for a in 0..kx as i64 {
                    for b in 0..ky as i64 {
                        for c in 0..kz as i64 {
                            let (si, sj, sl) = (i + a - rx, j + b - ry, l + c - rz);
                            if si < 0 || sj < 0 || sl < 0 || si >= nx as i64 || sj >= ny as i64 || sl >= nz as i64 {
                                continue;
                            }
                            let w = kernel[((a * ky as i64 + b) * kz as i64 + c) as usize];
                            acc += w * x[((si * ny as i64 + sj) * nz as i64 + sl) as usize];
                        }
                    }
                }
                out[((i * ny as i64 + j) * nz as i64 + l) as usize] = acc;
            }
        }
    }
    out
}

/// Weighted cross-entropy by explicit loops over batch, voxel and class.
/// `logits` is `[batch][class][voxel]` flattened; labels are 1-based.
pub fn scalar_cross_entropy(logits: &[f64], batch: usize, classes: usize, voxels: usize, labels: &[u32], weights: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for b in 0..batch {
        for v in 0..voxels {
            let at = |c: usize| logits[(b * classes + c) * voxels + v];
            let mut m = f64::NEG_INFINITY;
            for c in 0..classes {
                m = m.max(at(c));
            }
            let mut z = 0.0;
            for c in 0..classes {
                z += (at(c) - m).exp();
            }
            let y = labels[b * voxels + v] as usize - 1;
            let log_p = at(y) - m - z.ln();
            let w = weights[b * voxels + v];
            num -= w * log_p;
            den += w;
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Brute-force metrics: `(precision, recall, iou, per-class iou, mean)`.
pub struct BruteMetrics {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub per_class: Vec<f64>,
    pub mean: f64,
}

pub fn brute_metrics(pred: &[u8], gt: &[u8], mask: Option<&[bool]>, class_count: usize) -> BruteMetrics {
    let occupied = |l: u8| (l as usize) < class_count;
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let count = |f: &dyn Fn(usize) -> bool| (0..gt.len()).filter(|&i| keep(i) && f(i)).count() as u64;
    let tp = count(&|i| occupied(pred[i]) && occupied(gt[i]));
    let fp = count(&|i| occupied(pred[i]) && !occupied(gt[i]));
    let fn_ = count(&|i| !occupied(pred[i]) && occupied(gt[i]));
    let div = |n: u64, d: u64| {
        if d == 0 {
            if tp + fp + fn_ == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            n as f64 / d as f64
        }
    };
    let per_class: Vec<f64> = (1..class_count as u8)
        .map(|c| {
            let inter = count(&|i| pred[i] == c && gt[i] == c);
            let union = count(&|i| pred[i] == c || gt[i] == c);
            if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect();
    let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
    BruteMetrics {
        precision: div(tp, tp + fp),
        recall: div(tp, tp + fn_),
        iou: div(tp, tp + fp + fn_),
        per_class,
        mean,
    }
}

fn odd_set(rng: &mut impl Rng) -> Vec<usize> {
    let mut set: Vec<usize> = [1, 3, 5, 7].into_iter().filter(|_| rng.gen_bool(0.5)).collect();
    if set.is_empty() {
        set.push(2 * rng.gen_range(0..4) + 1);
    }
    set
}

/// A random valid AIC configuration over a random subset and order of axes.
pub fn random_aic_spec(rng: &mut impl Rng, modulation: Modulation, activation: Activation) -> AicSpec {
    let channels = rng.gen_range(1..=4);
    let bottleneck = if channels > 1 && rng.gen_bool(0.5) {
        Some(rng.gen_range(1..channels))
    } else {
        None
    };
    let mut axes = Axis::ALL.to_vec();
    let n_axes = rng.gen_range(1..=3);
    for i in (1..axes.len()).rev() {
        axes.swap(i, rng.gen_range(0..=i));
    }
    let banks = axes[..n_axes].iter().map(|&a| BankSpec::new(a, &odd_set(rng))).collect();
    AicSpec {
        channels,
        bottleneck,
        banks,
        modulation,
        activation,
    }
}

pub fn random_volume(rng: &mut impl Rng, batch: usize, channels: usize) -> aic_core::Tensor<f64> {
    let dims = [rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5)];
    aic_core::Tensor::from_fn(vec![batch, channels, dims[0], dims[1], dims[2]], |_| rng.gen_range(-2.0..2.0))
}

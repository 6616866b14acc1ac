//! Scene-completion (SC) and semantic scene-completion (SSC) metrics.
//!
//! Labels are 1-based; label `class_count` marks empty space and every label
//! below it is an occupied class.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};

/// Occupancy precision/recall/IoU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScMetrics {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub sc: ScMetrics,
    /// IoU of classes `1..class_count`, in order.
    pub ssc_iou_per_class: Vec<f64>,
    pub ssc_iou_mean: f64,
    /// Ground-truth voxel count per class within the evaluation mask.
    pub support: Vec<u64>,
    pub evaluated_voxels: u64,
}

fn check_shapes(pred: usize, gt: usize, mask: Option<usize>) -> Result<()> {
    if pred != gt || mask.is_some_and(|m| m != gt) {
        return Err(Error::shape(
            "metrics",
            format!("pred {pred}, gt {gt}, mask {mask:?} voxels"),
        ));
    }
    Ok(())
}

fn ratio(num: u64, den: u64, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Binary occupancy metrics over the voxels where `mask` is true (all voxels when `None`).
pub fn sc_metrics<L: Copy + Into<u32>>(
    pred: &[L],
    gt: &[L],
    mask: Option<&[bool]>,
    class_count: usize,
) -> Result<ScMetrics> {
    check_shapes(pred.len(), gt.len(), mask.map(<[bool]>::len))?;
    let empty = class_count as u32;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for i in 0..gt.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let p = pred[i].into() < empty;
        let g = gt[i].into() < empty;
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let both_empty = tp + fp + fn_ == 0;
    Ok(ScMetrics {
        precision: ratio(tp, tp + fp, both_empty),
        recall: ratio(tp, tp + fn_, both_empty),
        iou: ratio(tp, tp + fp + fn_, both_empty),
        tp,
        fp,
        fn_,
    })
}

/// Per-class IoU for classes `1..class_count`; classes absent from both grids score 0
/// and stay in the mean.
pub fn ssc_iou<L: Copy + Into<u32>>(
    pred: &[L],
    gt: &[L],
    mask: Option<&[bool]>,
    class_count: usize,
) -> Result<MetricsReport> {
    let sc = sc_metrics(pred, gt, mask, class_count)?;
    let n = class_count - 1;
    let mut inter = vec![0u64; n];
    let mut union = vec![0u64; n];
    let mut support = vec![0u64; n];
    let mut evaluated = 0u64;
    for i in 0..gt.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        evaluated += 1;
        let (p, g) = (pred[i].into() as usize, gt[i].into() as usize);
        if (1..=n).contains(&g) {
            support[g - 1] += 1;
            union[g - 1] += 1;
        }
        if (1..=n).contains(&p) {
            if p == g {
                inter[p - 1] += 1;
            } else {
                union[p - 1] += 1;
            }
        }
    }
    let per_class: Vec<f64> = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| if u == 0 { 0.0 } else { i as f64 / u as f64 })
        .collect();
    let mean = if n == 0 {
        0.0
    } else {
        per_class.iter().sum::<f64>() / n as f64
    };
    Ok(MetricsReport {
        sc,
        ssc_iou_per_class: per_class,
        ssc_iou_mean: mean,
        support,
        evaluated_voxels: evaluated,
    })
}

impl MetricsReport {
    /// Accumulates counts across several scenes before computing ratios.
    pub fn over_scenes<L: Copy + Into<u32>>(
        scenes: &[(&[L], &[L])],
        class_count: usize,
    ) -> Result<MetricsReport> {
        let mut pred = Vec::new();
        let mut gt = Vec::new();
        for (p, g) in scenes {
            check_shapes(p.len(), g.len(), None)?;
            pred.extend(p.iter().map(|&l| l.into()));
            gt.extend(g.iter().map(|&l| l.into()));
        }
        ssc_iou(&pred, &gt, None, class_count)
    }

    /// `key=value` lines, one metric per line.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sc_precision={:.6}", self.sc.precision);
        let _ = writeln!(s, "sc_recall={:.6}", self.sc.recall);
        let _ = writeln!(s, "sc_iou={:.6}", self.sc.iou);
        for (i, (iou, sup)) in self.ssc_iou_per_class.iter().zip(&self.support).enumerate() {
            let _ = writeln!(s, "ssc_iou_class_{}={:.6}", i + 1, iou);
            let _ = writeln!(s, "support_class_{}={}", i + 1, sup);
        }
        let _ = writeln!(s, "ssc_iou_mean={:.6}", self.ssc_iou_mean);
        let _ = writeln!(s, "evaluated_voxels={}", self.evaluated_voxels);
        s
    }
}

/// Parses `key=value` lines into a map; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let gt = [1u8, 2, 3, 3];
        let r = ssc_iou(&gt, &gt, None, 3).unwrap();
        assert_eq!((r.sc.precision, r.sc.recall, r.sc.iou), (1.0, 1.0, 1.0));
        assert_eq!(r.ssc_iou_per_class, vec![1.0, 1.0]);
        assert_eq!(r.ssc_iou_mean, 1.0);
    }

    #[test]
    fn counted_sc_case() {
        // TP=2, FP=1, FN=0 with empty label 3
        let pred = [1u8, 2, 1, 3];
        let gt = [1u8, 1, 3, 3];
        let m = sc_metrics(&pred, &gt, None, 3).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 0));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.recall, 1.0);
        assert!((m.iou - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn all_empty_is_perfect() {
        let e = [3u8; 5];
        let m = sc_metrics(&e, &e, None, 3).unwrap();
        assert_eq!((m.precision, m.recall, m.iou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_counted_ssc() {
        // N=2 (A=1, B=2), empty=3
        let pred = [1u8, 1, 2, 3];
        let gt = [1u8, 2, 2, 3];
        let r = ssc_iou(&pred, &gt, None, 3).unwrap();
        assert_eq!(r.ssc_iou_per_class, vec![0.5, 0.5]);
        assert_eq!(r.ssc_iou_mean, 0.5);
    }

    #[test]
    fn absent_class_scores_zero_and_counts() {
        let g = [1u8, 1, 4];
        let r = ssc_iou(&g, &g, None, 4).unwrap();
        assert_eq!(r.ssc_iou_per_class, vec![1.0, 0.0, 0.0]);
        assert!((r.ssc_iou_mean - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mask_and_shape_checks() {
        let pred = [1u8, 2];
        let gt = [1u8, 1];
        let r = ssc_iou(&pred, &gt, Some(&[true, false]), 3).unwrap();
        assert_eq!(r.ssc_iou_per_class[0], 1.0);
        assert_eq!(r.evaluated_voxels, 1);
        assert!(ssc_iou(&pred, &gt[..1], None, 3).is_err());
        assert!(sc_metrics(&pred, &gt, Some(&[true]), 3).is_err());
    }

    #[test]
    fn kv_report_parses() {
        let g = [1u8, 2, 3];
        let r = ssc_iou(&g, &g, None, 3).unwrap();
        let kv = parse_kv(&r.to_kv()).unwrap();
        assert_eq!(kv["sc_iou"], "1.000000");
        assert_eq!(kv["ssc_iou_class_2"], "1.000000");
        assert_eq!(kv["support_class_1"], "1");
        assert!(parse_kv("nonsense").is_err());
    }
}

//! Voxel-wise weighted softmax cross-entropy.
//!
//! `loss = Σ w · (−log softmax(logits)[label]) / Σ w`, with labels 1-based.
//! An all-zero weight field yields loss 0 and a zero gradient.

use crate::error::{Error, Result};
use crate::kernels::softmax_channels;
use crate::tensor::{Scalar, Tensor};

pub(crate) fn validate_labels(labels: &[u32], classes: usize, batch: usize, spatial: [usize; 3]) -> Result<()> {
    let vox: usize = spatial.iter().product();
    if labels.len() != batch * vox {
        return Err(Error::shape(
            "weighted_cross_entropy",
            format!("{} labels for {batch}×{vox} voxels", labels.len()),
        ));
    }
    if let Some(i) = labels.iter().position(|&l| l == 0 || l as usize > classes) {
        let (b, v) = (i / vox, i % vox);
        let z = v % spatial[2];
        let y = (v / spatial[2]) % spatial[1];
        let x = v / (spatial[1] * spatial[2]);
        return Err(Error::LabelOutOfRange {
            label: labels[i],
            classes,
            batch: b,
            x,
            y,
            z,
        });
    }
    Ok(())
}

/// Returns the normalised loss and the softmax probabilities.
pub fn cross_entropy_forward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u32],
    weights: &[T],
) -> Result<(T, Tensor<T>)> {
    let (c, vox, batch) = (logits.channels(), logits.voxels(), logits.batch());
    validate_labels(labels, c, batch, logits.spatial())?;
    if weights.len() != labels.len() {
        return Err(Error::shape(
            "weighted_cross_entropy",
            format!("{} weights for {} labels", weights.len(), labels.len()),
        ));
    }
    if let Some(i) = weights.iter().position(|&w| w < T::zero() || !w.is_finite()) {
        return Err(Error::NonFinite {
            what: "class weight (must be finite and ≥ 0)".into(),
            index: i,
        });
    }
    let probs = softmax_channels(logits)?;
    let total: T = weights.iter().copied().sum();
    if total == T::zero() {
        return Ok((T::zero(), probs));
    }
    let x = logits.data();
    let mut acc = T::zero();
    for b in 0..batch {
        for v in 0..vox {
            let i = b * vox + v;
            let w = weights[i];
            if w == T::zero() {
                continue;
            }
            // log-softmax via log-sum-exp for accuracy at confident predictions
            let mut m = T::neg_infinity();
            for ch in 0..c {
                m = m.max(x[(b * c + ch) * vox + v]);
            }
            let mut s = T::zero();
            for ch in 0..c {
                s += (x[(b * c + ch) * vox + v] - m).exp();
            }
            let label = labels[i] as usize - 1;
            let logp = x[(b * c + label) * vox + v] - m - s.ln();
            acc -= w * logp;
        }
    }
    Ok((acc / total, probs))
}

pub fn cross_entropy_backward<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[u32],
    weights: &[T],
    upstream: T,
) -> Tensor<T> {
    let (c, vox) = (probs.channels(), probs.voxels());
    let total: T = weights.iter().copied().sum();
    let mut grad = Tensor::zeros(probs.shape().to_vec());
    if total == T::zero() {
        return grad;
    }
    let p = probs.data();
    let g = grad.data_mut();
    for (i, (&label, &w)) in labels.iter().zip(weights).enumerate() {
        if w == T::zero() {
            continue;
        }
        let (b, v) = (i / vox, i % vox);
        let scale = upstream * w / total;
        for ch in 0..c {
            let idx = (b * c + ch) * vox + v;
            let onehot = if ch + 1 == label as usize { T::one() } else { T::zero() };
            g[idx] = scale * (p[idx] - onehot);
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Tensor::<f64>::zeros(vec![1, 12, 1, 1, 1]);
        let (l, _) = cross_entropy_forward(&logits, &[5], &[1.0]).unwrap();
        assert!((l - 12f64.ln()).abs() < 1e-12);
        assert!((l - 2.48491).abs() < 1e-5);
    }

    #[test]
    fn zero_weights_zero_gradient() {
        let logits = Tensor::<f64>::from_fn(vec![1, 3, 2, 1, 1], |i| i as f64);
        let (l, p) = cross_entropy_forward(&logits, &[1, 2], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 0.0);
        let g = cross_entropy_backward(&p, &[1, 2], &[0.0, 0.0], 1.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_label_names_voxel() {
        let logits = Tensor::<f64>::zeros(vec![1, 3, 2, 2, 2]);
        let mut labels = vec![1u32; 8];
        labels[6] = 4;
        let err = cross_entropy_forward(&logits, &labels, &[1.0; 8]).unwrap_err();
        match err {
            Error::LabelOutOfRange { label, x, y, z, .. } => {
                assert_eq!((label, x, y, z), (4, 1, 1, 0));
            }
            other => panic!("unexpected {other}"),
        }
        labels[6] = 0;
        assert!(cross_entropy_forward(&logits, &labels, &[1.0; 8]).is_err());
    }

    #[test]
    fn single_weighted_voxel_controls_loss() {
        let a = Tensor::<f64>::from_fn(vec![1, 3, 2, 1, 1], |i| (i as f64).cos());
        let mut b = a.clone();
        // perturb the unweighted voxel only (voxel 1 of each channel)
        for ch in 0..3 {
            b.data_mut()[ch * 2 + 1] += 7.0;
        }
        let w = [1.0, 0.0];
        let (la, _) = cross_entropy_forward(&a, &[2, 3], &w).unwrap();
        let (lb, _) = cross_entropy_forward(&b, &[2, 1], &w).unwrap();
        assert_eq!(la, lb);
    }
}

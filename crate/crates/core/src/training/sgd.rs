use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Precision, Scalar, Tensor};
use crate::training::weights::WeightMode;

/// Optimisation and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// The learning rate is divided by this factor every `lr_decay_every` epochs.
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub class_weights: WeightMode,
    pub empty_ratio: f64,
    /// Write an intermediate checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay_factor: 10.0,
            lr_decay_every: 15,
            batch_size: 4,
            epochs: 30,
            seed: 0,
            precision: Precision::F32,
            class_weights: WeightMode::Uniform,
            empty_ratio: 2.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be ≥ 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.lr_decay_factor >= 1.0) || self.lr_decay_every == 0 {
            return Err(Error::Config(
                "lr_decay_factor must be ≥ 1 and lr_decay_every positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.empty_ratio >= 0.0) {
            return Err(Error::Config("empty_ratio must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Step schedule: `lr / factor^(epoch / every)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = (epoch / self.lr_decay_every) as i32;
        self.lr / self.lr_decay_factor.powi(drops)
    }
}

/// Momentum SGD with L2 weight decay folded into the gradient:
/// `v ← μv + g + λθ`, `θ ← θ − lr·v`.
#[derive(Clone, Debug, Default)]
pub struct Sgd<T> {
    velocity: ParamStore<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new() -> Self {
        Sgd {
            velocity: ParamStore::new(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &ParamStore<T>,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Result<()> {
        for (name, g) in grads.iter() {
            if let Some(i) = g.value.first_non_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of `{name}`"),
                    index: i,
                });
            }
        }
        let (lr, mu, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
        for (name, p) in params.iter_mut() {
            let g = grads.get(name)?;
            if !self.velocity.contains(name) {
                self.velocity
                    .insert(name, Tensor::zeros(p.value.shape().to_vec()), p.decay);
            }
            let v = self.velocity.get_mut(name)?;
            let decay = if p.decay { wd } else { T::zero() };
            for ((theta, vel), &grad) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vel = mu * *vel + grad + decay * *theta;
                *theta -= lr * *vel;
            }
        }
        Ok(())
    }
}

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::network::{AicNet, NetworkSpec, SceneSample};
use crate::params::Binder;
use crate::tensor::Scalar;
use crate::training::checkpoint::Checkpoint;
use crate::training::sgd::{Sgd, TrainConfig};
use crate::training::weights::make_class_weights;

/// One epoch's summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

pub struct FitResult<T> {
    pub net: AicNet<T>,
    pub history: Vec<EpochLog>,
    /// Checkpoint files written, in order.
    pub checkpoints: Vec<PathBuf>,
}

/// Loss weights for a sample: its stored weights, or the configured scheme.
pub fn sample_weights(sample: &SceneSample, index: usize, spec: &NetworkSpec, config: &TrainConfig) -> Vec<f32> {
    match &sample.weights {
        Some(w) => w.clone(),
        None => make_class_weights(
            &sample.labels,
            spec.class_count,
            config.class_weights,
            config.empty_ratio,
            config.seed.wrapping_add(index as u64),
        ),
    }
}

/// Mean weighted cross-entropy of `net` on a batch, and the parameter gradients.
pub fn loss_and_grads<T: Scalar>(
    net: &AicNet<T>,
    samples: &[&SceneSample],
    weights: &[&[f32]],
) -> Result<(f64, crate::params::ParamStore<T>)> {
    let inputs = net.inputs(samples)?;
    let mut graph = Graph::new();
    let mut binder = Binder::new(&net.params, true);
    let out = net.forward(&mut graph, &mut binder, &inputs)?;
    let labels: Vec<u32> = samples
        .iter()
        .flat_map(|s| s.labels.iter().map(|&l| l as u32))
        .collect();
    let w: Vec<T> = weights
        .iter()
        .flat_map(|w| w.iter().map(|&v| T::of(v as f64)))
        .collect();
    let loss = graph.weighted_cross_entropy(out.logits, Arc::new(labels), Arc::new(w))?;
    let value = graph.value(loss).item().as_f64();
    graph.backward(loss)?;
    Ok((value, binder.gradients(&graph)))
}

/// Trains a freshly initialised network (seeded by `config.seed`).
pub fn fit<T: Scalar>(
    dataset: &[SceneSample],
    spec: &NetworkSpec,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<FitResult<T>> {
    let net = AicNet::<T>::new(spec.clone(), config.seed)?;
    fit_from(net, dataset, config, checkpoint_dir, on_epoch)
}

/// Continues training `net`.
pub fn fit_from<T: Scalar>(
    mut net: AicNet<T>,
    dataset: &[SceneSample],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitResult<T>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let weights: Vec<Vec<f32>> = dataset
        .iter()
        .enumerate()
        .map(|(i, s)| sample_weights(s, i, &net.spec, config))
        .collect();
    let mut opt = Sgd::new();
    let mut history = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let samples: Vec<&SceneSample> = idx.iter().map(|&i| &dataset[i]).collect();
            let w: Vec<&[f32]> = idx.iter().map(|&i| weights[i].as_slice()).collect();
            let (loss, grads) = loss_and_grads(&net, &samples, &w)?;
            if !loss.is_finite() {
                return Err(Error::NanLoss { epoch, batch });
            }
            opt.step(&mut net.params, &grads, lr, config.momentum, config.weight_decay)?;
            total += loss;
            batches += 1;
        }
        let log = EpochLog {
            epoch,
            lr,
            mean_loss: total / batches as f64,
        };
        on_epoch(&log);
        history.push(log);
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                let path = dir.join(format!("epoch-{:04}.ckpt", epoch + 1));
                Checkpoint::new(&net.spec, config, epoch + 1, &net.params).save(&path)?;
                checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        let path = dir.join("final.ckpt");
        Checkpoint::new(&net.spec, config, config.epochs, &net.params).save(&path)?;
        checkpoints.push(path);
    }
    Ok(FitResult {
        net,
        history,
        checkpoints,
    })
}

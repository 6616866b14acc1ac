//! Loss, class weighting, optimizer, schedule and the training loop.

pub mod checkpoint;
pub mod fit;
pub mod loss;
pub mod sgd;
pub mod weights;

pub use checkpoint::Checkpoint;
pub use fit::{fit, fit_from, loss_and_grads, sample_weights, EpochLog, FitResult};
pub use loss::{cross_entropy_backward, cross_entropy_forward};
pub use sgd::{Sgd, TrainConfig};
pub use weights::{make_class_weights, WeightMode};

//! Minimal feed-forward network engine: dense ReLU layers, exact
//! backpropagation, distillation losses and three optimizers.

pub mod loss;
pub mod matrix;
pub mod network;
pub mod optim;
pub mod train;
pub mod weights;

pub use loss::{
    cross_entropy, kd_kl_loss, kd_total_loss, softmax_temperature, KlDirection, LossSpec,
};
pub use matrix::Matrix;
pub use network::{accuracy, forward, loss_and_gradients, per_example_gradients, predict};
pub use optim::{dp_clip_and_noise, OptimizerSpec, OptimizerState};
pub use train::{train, Objective, ShuffleSource, TrainLog, TrainRun};
pub use weights::{Layer, ModelWeights, NUM_CLASSES};

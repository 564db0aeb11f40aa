//! Minimal differentiable core: layers with analytic gradients, a sequential
//! network, softmax cross-entropy, SGD and checkpoint files.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;

pub use layers::{AvgPool, Conv2d, Dense, Layer};
pub use loss::{cross_entropy, one_hot};
pub use network::{Mode, Network, Tape};
pub use optim::{OptimizerConfig, Schedule, Sgd};

/// One SGD update of `model` using its accumulated gradients.
pub fn sgd_step(model: &mut Network, optimizer: &mut Sgd, step_index: usize, total_steps: usize) -> f32 {
    optimizer.step(model, step_index, total_steps)
}

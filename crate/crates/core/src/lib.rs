//! Robust training with adversarially mixed augmentation chains.
//!
//! The crate bundles everything needed to train and evaluate a small CNN with
//! AugMix and AugMax style augmentation:
//!
//! - [`diffcore`]: tensors, layers with analytic gradients, SGD, checkpoints
//! - [`normlayers`]: BN / IN / DuBN / DuBIN with clean and adversarial routes
//! - [`augops`]: augmentation operators and random chain sampling
//! - [`mixer`]: the mixing function, its gradients, and AugMix sampling
//! - [`adversary`]: learned worst-case mixing, pixel PGD and worst-of-k attacks
//! - [`model`]: the SmallCNN classifier
//! - [`trainer`]: the min-max training loop with Jensen-Shannon consistency
//! - [`robustbench`]: corruption suite, SA/RA and mCE
//! - [`data`], [`config`], [`cli`]: datasets, experiment configs, commands

pub mod adversary;
pub mod augops;
pub mod cli;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod mixer;
pub mod model;
pub mod normlayers;
pub mod robustbench;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use normlayers::{NormKind, NormRoute};
pub use tensor::Tensor;

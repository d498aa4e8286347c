//! Training ReLU networks that stay accurate under additive Gaussian input
//! noise, without noisy data augmentation.
//!
//! The crate is organised around one idea: for a network whose first layer is
//! affine followed by a ReLU, the mean of the post-ReLU activations under
//! Gaussian input noise has a closed form, `T(mu, sigma) = mu*CDF(mu/sigma) +
//! sigma*PDF(mu/sigma)`. Forwarding that mean through the rest of the network
//! approximates the expected prediction at the cost of one extra forward
//! pass, and penalising its loss trains noise-robust classifiers
//! deterministically.
//!
//! Module map:
//! - [`tensor`]: dense f64 tensors, layer kernels, and a tape-based
//!   reverse-mode differentiation graph.
//! - [`moments`]: Gaussian special functions, the Gaussian-ReLU mean, noise
//!   variance propagation through the first layer, expected predictions.
//! - [`nets`]: the split-network type (affine head, ReLU, remainder) and the
//!   LeNet/AlexNet model zoo.
//! - [`objective`]: clean, augmentation, and moment-regularized losses.
//! - [`optim`]: Adam / Nesterov SGD, plateau learning-rate schedule,
//!   validation-split early stopping, the training loop.
//! - [`robustness`]: the additive-noise robustness metric and its sigma-sweep
//!   evaluation.
//! - [`data`]: MNIST/CIFAR loaders, batching, noise sampling.
//! - [`harness`]: experiment configs, run orchestration, comparison tables,
//!   plot emission.

pub mod data;
pub mod error;
pub mod harness;
pub mod moments;
pub mod nets;
pub mod objective;
pub mod optim;
pub mod robustness;
pub mod rng;
pub mod special;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, VarId};

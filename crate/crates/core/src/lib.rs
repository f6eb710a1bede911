//! Curriculum training laboratory for k-parity with a simplified
//! multi-layer transformer.
//!
//! The crate builds the parity tree for a secret set, samples padded
//! chain-of-thought batches, runs the level-restricted attention model and
//! its exact reverse-mode gradient, and trains it either with one quantized
//! gradient step per stage or with many adaptive-moment steps per stage.

pub mod config;
pub mod data;
pub mod error;
pub mod grad;
pub mod io;
pub mod lemmas;
pub mod link;
pub mod mask;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod train;
pub mod tree;

pub use config::{parse_config, parse_config_str, KnMode, Mode, TrainConfig};
pub use data::{check_padding, expand_cot, make_test_batch, sample_batch, sample_secret, Batch, StageTag};
pub use error::{Error, Result};
pub use grad::{analytic_signal, grad_fd, grad_reverse, loss_and_grad, noisy_oracle, GradientTensor};
pub use link::{validate_link, CosineLink, Link};
pub use mask::{masked_softmax, AttentionMask};
pub use matrix::LogitMatrix;
pub use model::{forward, hidden_state_oracle, loss_stage, readout, HiddenState, ModelParams, ResidualStream};
pub use rng::SeedSpec;
pub use scalar::Scalar;
pub use train::{evaluate, forward_error_trace, quantize, train_experiment, train_theory, Evaluation, RunRecord};
pub use tree::{LeafSet, ParityTree, TreeManifest};

pub type Params = ModelParams<f64>;
pub type Params32 = ModelParams<f32>;
pub type Stream = ResidualStream<f64>;
pub type Gradient = GradientTensor<f64>;

//! Reinforcement-learned strong augmentation for contrastive learning on
//! single-channel biosignal epochs.
//!
//! The crate provides a small reverse-mode autodiff engine, the augmentation
//! family, the encoder and policy networks, the InfoNCE and Soft-KNN
//! objectives, the policy-gradient update, dataset handling and the two-phase
//! training pipeline.

pub mod augment;
pub mod autodiff;
mod binio;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod reward;
pub mod rl;
pub mod rng;

pub use augment::{ActionKind, AugmentationAction, Epoch, StrongParams, WeakParams};
pub use autodiff::{Graph, ParamStore, Tensor, Var};
pub use error::{Error, ErrorKind, Result};
pub use model::{AgentContext, Encoder, EncoderConfig, PolicyConfig, PolicyNet};
pub use reward::ReferenceSet;
pub use pipeline::{run_experiment, EvalReport, ExperimentConfig, RewardMode, Strategy};

//! Behavior cloning from pixels.
//!
//! [`train_bc`] regresses demonstrated actions from frame stacks, evaluates
//! the policy every few epochs on fixed environment seeds and ranks the
//! checkpoints. Frozen backbones without augmentation train on cached
//! features.

mod config;
mod eval;
mod policy;
mod sweep;
mod trainer;

pub use config::{desk_scale_encoder, BCConfig, CacheMode, EncoderConfig};
pub use eval::{eval_seeds, evaluate, EvalStats};
pub use policy::BcPolicy;
pub use sweep::{data_efficiency_sweep, demo_order};
pub use trainer::{finetune_pretrained, train_bc, train_bc_cached, BCResult, BcTrainer};

use vmc_augment::AugmentError;
use vmc_core::CoreError;
use vmc_encoders::EncoderError;
use vmc_envdata::EnvError;
use vmc_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum BcError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("insufficient data: needed {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("non-finite training loss at iteration {0}")]
    NonFinite(u64),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

//! Reinforcement learning from pixels.
//!
//! [`OffPolicyAgent`] is a twin-critic deterministic actor-critic trained
//! from an n-step [`ReplayBuffer`] with random-shift augmentation on both
//! current and next observations. [`OnPolicyAgent`] is a clipped-surrogate
//! policy-gradient learner over [`RolloutBatch`]es whose advantages come
//! from [`compute_gae`] on unaugmented data. Both collect experience
//! through a [`Collector`], which owns a pool of environments and hands out
//! episode seeds from a single counter, so results do not depend on how
//! many environments run in parallel.

mod checkpoint;
mod encoder;
mod eval;
mod gae;
mod offpolicy;
mod onpolicy;
mod replay;
mod rollout;
mod train;

pub use checkpoint::Checkpoint;
pub use encoder::RlEncoder;
pub use eval::{evaluate_returns, reference_bounds, ActingPolicy, ReturnBounds};
pub use gae::compute_gae;
pub use offpolicy::{td_target, NoiseSchedule, OffPolicyAgent, OffPolicyConfig, OffPolicyLosses};
pub use onpolicy::{clipped_surrogate, OnPolicyAgent, OnPolicyConfig, OnPolicyLosses, RolloutBatch};
pub use replay::{ReplayBuffer, ReplaySample};
pub use rollout::{collect_rollout, ActKey, ActOutput, Collector, CollectorState, Rollout, RolloutAgent, Segment, SegmentEnd, SlotState};
pub use train::{OffPolicyTrainer, OnPolicyTrainer, RlResult, TrainBudget};

use vmc_augment::AugmentError;
use vmc_core::CoreError;
use vmc_encoders::EncoderError;
use vmc_envdata::EnvError;
use vmc_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least {needed} samples, have {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("non-finite value: {0}")]
    Numerical(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
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

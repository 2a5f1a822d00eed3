use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use vmc_core::FrameShape;
use vmc_encoders::{load_backbone, Backend, BackendMode, ConvNetSpec, StackMode};

use crate::RlError;

/// Visual encoder of an RL agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum RlEncoder {
    /// Trained from scratch on the stacked frames (channels concatenated).
    Scratch { spec: ConvNetSpec },
    /// A frozen pre-trained backbone applied per frame; observations are
    /// resized to `native`.
    Pretrained {
        name: String,
        #[serde(default)]
        weights: Option<PathBuf>,
        native: usize,
    },
}

impl RlEncoder {
    pub fn is_pretrained(&self) -> bool {
        matches!(self, RlEncoder::Pretrained { .. })
    }

    pub(crate) fn build(&self, frame: FrameShape, depth: usize, seed: u64) -> Result<Backend<f32>, RlError> {
        match self {
            RlEncoder::Scratch { spec } => Ok(Backend::scratch(
                spec,
                (frame.channels * depth, frame.height, frame.width),
                StackMode::Channels,
                seed,
            )?),
            RlEncoder::Pretrained { name, weights, native } => {
                let b = load_backbone(name, weights.as_deref(), BackendMode::Frozen, *native)?;
                if b.stack_mode() != StackMode::PerFrame || b.net().input_shape().0 != frame.channels {
                    return Err(RlError::Config(format!("backbone `{name}` does not take {}-channel frames", frame.channels)));
                }
                Ok(b)
            }
        }
    }
}

/// Feature width of `backend` for a stack of `depth` frames.
pub(crate) fn feature_dim(backend: &Backend<f32>, depth: usize) -> usize {
    match backend.stack_mode() {
        StackMode::PerFrame => backend.stacked_dim(depth),
        StackMode::Channels => backend.output_dim(),
    }
}

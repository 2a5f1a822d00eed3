//! Visual encoders: the scratch ConvNets, Flare frame fusion, policy heads,
//! the pre-trained backbone adapter and its feature cache.

pub mod arch;
mod backend;
mod cache;
mod convnet;
mod flare;
mod head;
mod resize;

pub use arch::{ConvLayerSpec, ConvNetSpec, EncoderVariant, Readout};
pub use backend::{build_scratch_encoder, load_backbone, Backend, BackendMode, BackendSource, StackMode, MOCK_PRETRAINED};
pub use cache::{cache_features, FeatureCache};
pub use convnet::ConvNet;
pub use flare::{flare_fuse, flare_graph, fused_dim};
pub use head::{HeadSpec, PolicyHead};
pub use resize::resize_bilinear;

use vmc_core::CoreError;
use vmc_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid backend mode: {0}")]
    InvalidMode(String),
    #[error("cannot switch a {origin:?} backend from {from:?} to {to:?}")]
    UnsupportedTransition { origin: BackendSource, from: BackendMode, to: BackendMode },
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

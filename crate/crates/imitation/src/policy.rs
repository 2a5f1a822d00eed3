use rand::SeedableRng;
use vmc_core::{FrameShape, ObservationBatch, RngPolicy};
use vmc_encoders::{flare_graph, load_backbone, Backend, HeadSpec, PolicyHead, StackMode};
use vmc_nn::{Graph, ParamStore, Var};

use crate::config::{BCConfig, EncoderConfig};
use crate::BcError;

/// Per-frame visual encoder, optional Flare fusion and an MLP head.
#[derive(Debug)]
pub struct BcPolicy {
    pub(crate) backend: Backend<f32>,
    pub(crate) head: PolicyHead,
    pub(crate) head_store: ParamStore<f32>,
    frame_stack: usize,
    flare: bool,
    action_dim: usize,
}

impl BcPolicy {
    pub fn new(config: &BCConfig, frame: FrameShape, action_dim: usize) -> Result<Self, BcError> {
        let policy = RngPolicy::new(config.seed);
        let input = (frame.channels, frame.height, frame.width);
        let backend = match &config.encoder {
            EncoderConfig::Scratch { spec } => {
                Backend::scratch(spec, input, StackMode::PerFrame, policy.derive_seed("bc/encoder", 0))?
            }
            EncoderConfig::Pretrained { name, weights, mode, native } => {
                load_backbone(name, weights.as_deref(), *mode, *native)?
            }
        };
        if backend.net().input_shape().0 != frame.channels {
            return Err(BcError::Config(format!(
                "encoder takes {} channels per frame, observations have {}",
                backend.net().input_shape().0,
                frame.channels
            )));
        }
        let d = if config.flare {
            backend.fused_dim(config.frame_stack)
        } else {
            backend.stacked_dim(config.frame_stack)
        };
        let mut head_store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(policy.derive_seed("bc/head", 0));
        let head = PolicyHead::new(&mut head_store, "policy", d, action_dim, &config.head_spec(), &mut rng);
        Ok(Self { backend, head, head_store, frame_stack: config.frame_stack, flare: config.flare, action_dim })
    }

    /// A policy around an existing backend, mainly for probing heads.
    pub fn with_backend(
        backend: Backend<f32>,
        head_spec: &HeadSpec,
        frame_stack: usize,
        flare: bool,
        action_dim: usize,
        seed: u64,
    ) -> Self {
        let d = if flare { backend.fused_dim(frame_stack) } else { backend.stacked_dim(frame_stack) };
        let mut head_store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(RngPolicy::new(seed).derive_seed("bc/head", 0));
        let head = PolicyHead::new(&mut head_store, "policy", d, action_dim, head_spec, &mut rng);
        Self { backend, head, head_store, frame_stack, flare, action_dim }
    }

    pub fn backend(&self) -> &Backend<f32> {
        &self.backend
    }

    pub fn head_store(&self) -> &ParamStore<f32> {
        &self.head_store
    }

    pub fn frame_stack(&self) -> usize {
        self.frame_stack
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Backbone and head parameters, in that order.
    pub fn snapshot(&self) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
        (self.backend.store().snapshot(), self.head_store.snapshot())
    }

    /// Actions from `[N, T*C, H, W]` raw stacks, computed in evaluation mode.
    pub fn act(&self, batch: &ObservationBatch) -> Result<Vec<Vec<f32>>, BcError> {
        let mut g = Graph::new(false);
        let z = self.backend.encode(&mut g, batch)?;
        let a = self.head_from_latents(&mut g, z)?;
        Ok(g.value(a).data.chunks(self.action_dim).map(<[f32]>::to_vec).collect())
    }

    /// Head output from stacked per-frame latents `[N, T * d]`.
    pub(crate) fn head_from_latents(&self, g: &mut Graph<f32>, z: Var) -> Result<Var, BcError> {
        let x = if self.flare { flare_graph(g, z, self.frame_stack)? } else { z };
        Ok(self.head.forward(g, &self.head_store, x)?)
    }
}

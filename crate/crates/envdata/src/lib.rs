//! Environments and demonstration data.
//!
//! [`Environment`] is the simulator interface used by every trainer.
//! [`SyntheticReachEnv`] is a small 2-D reaching task with a renderer that
//! exposes semantic layers, so the perturbation wrappers can recolor or
//! re-texture exactly the pixels they claim to.

mod archive;
mod demos;
mod pool;
mod reach;
mod wrappers;

pub use archive::{load_demos, save_demos, FORMAT_VERSION};
pub use demos::{generate_demos, rollout_expert, scripted_expert, Expert, ScriptedExpert};
pub use pool::EnvPool;
pub use reach::{ReachConfig, SyntheticReachEnv, REACH_TASK_ID};
pub use wrappers::{wrap_random_colors, wrap_video_background, Perturbation, PerturbationWrapper, TextureSource};
pub use reach::BASE_PALETTE;

use vmc_core::{CoreError, Frame, FrameShape};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("environment does not support {0}")]
    Unsupported(String),
    #[error("invalid environment state: {0}")]
    InvalidState(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("environment fault: {0}")]
    Fault(String),
    #[error("expert reached only {successes} successes in {attempts} attempts (needed {needed})")]
    ExpertFailure { successes: usize, attempts: usize, needed: usize },
    #[error("episode {episode}: blob truncated ({got} of {expected} bytes)")]
    Truncated { episode: usize, expected: u64, got: u64 },
    #[error("archive format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("archive size inconsistency: {0}")]
    SizeInconsistency(String),
    #[error("archive: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub task_id: String,
    pub frame: FrameShape,
    pub action_dim: usize,
    pub action_low: f32,
    pub action_high: f32,
    pub proprio_dim: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Frame,
    pub reward: f32,
    /// Episode over (success or horizon reached).
    pub done: bool,
    pub success: bool,
}

/// Colors of the semantic layers, unit-float RGB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Palette {
    pub agent: [f32; 3],
    pub goal: [f32; 3],
    pub floor: [[f32; 3]; 2],
    pub background: [f32; 3],
}

/// Overrides applied when rendering.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RenderStyle {
    pub palette: Option<Palette>,
    /// `[3, H, W]` texture blended into background pixels with the given
    /// opacity.
    pub background: Option<(Vec<f32>, f32)>,
}

pub trait Environment: Send {
    fn spec(&self) -> EnvSpec;

    fn reset(&mut self, seed: u64) -> Result<Frame, EnvError>;

    fn step(&mut self, action: &[f32]) -> Result<StepResult, EnvError>;

    /// Low-dimensional state available to the policy, if any.
    fn proprio(&self) -> Option<Vec<f32>> {
        None
    }

    /// Ground-truth task state for scripted experts.
    fn privileged_state(&self) -> Option<Vec<f32>> {
        None
    }

    /// Renders the current state with style overrides.
    fn render_styled(&self, _style: &RenderStyle) -> Result<Frame, EnvError> {
        Err(EnvError::Unsupported("styled rendering".into()))
    }

    /// Per-pixel flags for pixels touched by task objects.
    fn foreground_mask(&self) -> Result<Vec<bool>, EnvError> {
        Err(EnvError::Unsupported("semantic masks".into()))
    }

    /// Default colors of the semantic layers.
    fn base_palette(&self) -> Result<Palette, EnvError> {
        Err(EnvError::Unsupported("semantic masks".into()))
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn spec(&self) -> EnvSpec {
        (**self).spec()
    }
    fn reset(&mut self, seed: u64) -> Result<Frame, EnvError> {
        (**self).reset(seed)
    }
    fn step(&mut self, action: &[f32]) -> Result<StepResult, EnvError> {
        (**self).step(action)
    }
    fn proprio(&self) -> Option<Vec<f32>> {
        (**self).proprio()
    }
    fn privileged_state(&self) -> Option<Vec<f32>> {
        (**self).privileged_state()
    }
    fn render_styled(&self, style: &RenderStyle) -> Result<Frame, EnvError> {
        (**self).render_styled(style)
    }
    fn foreground_mask(&self) -> Result<Vec<bool>, EnvError> {
        (**self).foreground_mask()
    }
    fn base_palette(&self) -> Result<Palette, EnvError> {
        (**self).base_palette()
    }
}

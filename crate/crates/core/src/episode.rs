use serde::{Deserialize, Serialize};

use crate::error::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FrameShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// A single uint8 image in `[C, H, W]` layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    shape: FrameShape,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(shape: FrameShape, pixels: Vec<u8>) -> Result<Self, CoreError> {
        if pixels.len() != shape.len() {
            return Err(CoreError::Shape(format!(
                "{} pixels for frame shape {:?}",
                pixels.len(),
                shape
            )));
        }
        Ok(Self { shape, pixels })
    }

    pub fn filled(shape: FrameShape, value: u8) -> Self {
        Self { shape, pixels: vec![value; shape.len()] }
    }

    /// Quantizes unit-float values (`[C, H, W]`) to uint8.
    pub fn from_unit(shape: FrameShape, values: &[f32]) -> Result<Self, CoreError> {
        if values.len() != shape.len() {
            return Err(CoreError::Shape(format!("{} values for frame shape {:?}", values.len(), shape)));
        }
        let pixels = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Ok(Self { shape, pixels })
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

/// One demonstration or rollout: per-step observations, actions and rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub observations: Vec<Frame>,
    pub actions: Vec<Vec<f32>>,
    pub rewards: Vec<f32>,
    pub success: bool,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let l = self.observations.len();
        if l == 0 {
            return Err(CoreError::InsufficientData { needed: 1, got: 0 });
        }
        if self.actions.len() != l || self.rewards.len() != l {
            return Err(CoreError::Shape(format!(
                "episode lengths disagree: {} observations, {} actions, {} rewards",
                l,
                self.actions.len(),
                self.rewards.len()
            )));
        }
        let a = self.actions[0].len();
        if self.actions.iter().any(|v| v.len() != a) {
            return Err(CoreError::Shape("action dimension varies within episode".into()));
        }
        let s = self.observations[0].shape();
        if self.observations.iter().any(|f| f.shape() != s) {
            return Err(CoreError::Shape("frame shape varies within episode".into()));
        }
        Ok(())
    }

    /// Frames `[t - depth + 1, t]`, repeating the first frame before the
    /// episode start.
    pub fn stack_at(&self, t: usize, depth: usize) -> Vec<&Frame> {
        (0..depth)
            .map(|k| {
                let back = depth - 1 - k;
                &self.observations[t.saturating_sub(back)]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub task_id: String,
    pub action_dim: usize,
    pub frame_shape: FrameShape,
    pub episodes: Vec<EpisodeRecord>,
}

impl DemoDataset {
    pub fn new(
        task_id: impl Into<String>,
        action_dim: usize,
        frame_shape: FrameShape,
        episodes: Vec<EpisodeRecord>,
    ) -> Result<Self, CoreError> {
        let d = Self { task_id: task_id.into(), action_dim, frame_shape, episodes };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        for (i, e) in self.episodes.iter().enumerate() {
            e.validate().map_err(|err| CoreError::InvalidArgument(format!("episode {i}: {err}")))?;
            if e.actions[0].len() != self.action_dim {
                return Err(CoreError::Shape(format!(
                    "episode {i} has action dim {}, dataset declares {}",
                    e.actions[0].len(),
                    self.action_dim
                )));
            }
            if e.observations[0].shape() != self.frame_shape {
                return Err(CoreError::Shape(format!(
                    "episode {i} has frame shape {:?}, dataset declares {:?}",
                    e.observations[0].shape(),
                    self.frame_shape
                )));
            }
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        self.episodes.iter().map(EpisodeRecord::len).sum()
    }

    /// Keeps the episodes at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> DemoDataset {
        DemoDataset {
            task_id: self.task_id.clone(),
            action_dim: self.action_dim,
            frame_shape: self.frame_shape,
            episodes: indices.iter().map(|&i| self.episodes[i].clone()).collect(),
        }
    }
}

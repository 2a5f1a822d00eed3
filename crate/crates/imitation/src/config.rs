use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use vmc_augment::AugmentationSpec;
use vmc_encoders::{BackendMode, ConvLayerSpec, ConvNetSpec, EncoderVariant, HeadSpec, Readout, MOCK_PRETRAINED};

use crate::BcError;

/// Where the visual encoder comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum EncoderConfig {
    /// Trained from scratch together with the head.
    Scratch { spec: ConvNetSpec },
    /// A pre-trained backbone, frozen or finetuned.
    Pretrained {
        name: String,
        #[serde(default)]
        weights: Option<PathBuf>,
        mode: BackendMode,
        /// Square input side the backbone expects; frames are resized to it.
        native: usize,
    },
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::Scratch { spec: ConvNetSpec::scratch(EncoderVariant::Bc) }
    }
}

impl EncoderConfig {
    pub fn mock_pretrained(mode: BackendMode, native: usize) -> Self {
        EncoderConfig::Pretrained { name: MOCK_PRETRAINED.into(), weights: None, mode, native }
    }

    pub fn mode(&self) -> BackendMode {
        match self {
            EncoderConfig::Scratch { .. } => BackendMode::Trainable,
            EncoderConfig::Pretrained { mode, .. } => *mode,
        }
    }

    pub fn is_pretrained(&self) -> bool {
        matches!(self, EncoderConfig::Pretrained { .. })
    }
}

/// Whether a frozen backbone trains on precomputed features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Cache when the backbone is frozen and augmentation is off.
    #[default]
    Auto,
    /// Require the cache; configurations that cannot use it are rejected.
    Force,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BCConfig {
    pub encoder: EncoderConfig,
    /// `None` picks the default head, with a leading batch norm for
    /// pre-trained backbones.
    pub head: Option<HeadSpec>,
    pub augmentation: AugmentationSpec,
    /// Images for overlay augmentation; procedural distractors otherwise.
    pub distractor_dir: Option<PathBuf>,
    pub epochs: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate of a finetuned backbone; defaults to `lr`.
    pub backbone_lr: Option<f64>,
    /// Number of demonstrations used; `None` uses all of them.
    pub demo_count: Option<usize>,
    pub frame_stack: usize,
    /// Fuse per-frame latents with temporal differences before the head.
    pub flare: bool,
    pub cache: CacheMode,
    pub seed: u64,
}

impl Default for BCConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            head: None,
            augmentation: AugmentationSpec::none(),
            distractor_dir: None,
            epochs: 100,
            eval_every: 2,
            eval_episodes: 10,
            batch_size: 256,
            lr: 1e-3,
            backbone_lr: None,
            demo_count: None,
            frame_stack: 3,
            flare: true,
            cache: CacheMode::Auto,
            seed: 0,
        }
    }
}

/// Three stride-2 batch-normalized 16-channel convolutions, for 32x32 frames.
pub fn desk_scale_encoder() -> ConvNetSpec {
    ConvNetSpec { layers: vec![ConvLayerSpec::new(16, 3, 2, 1, true); 3], readout: Readout::Flatten }
}

impl BCConfig {
    /// Scratch-encoder settings that train on one CPU core in about a
    /// minute per seed on 32x32 synthetic frames.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            encoder: EncoderConfig::Scratch { spec: desk_scale_encoder() },
            batch_size: 64,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BcError> {
        let bad = |m: String| Err(BcError::Config(m));
        if self.epochs == 0 || self.eval_every == 0 || self.eval_every > self.epochs {
            return bad(format!("need epochs >= eval_every >= 1, got {} and {}", self.epochs, self.eval_every));
        }
        if self.batch_size == 0 || self.frame_stack == 0 || self.eval_episodes == 0 {
            return bad("batch size, frame stack and eval episodes must be positive".into());
        }
        for lr in [Some(self.lr), self.backbone_lr].into_iter().flatten() {
            if !lr.is_finite() || lr < 0.0 {
                return bad(format!("learning rate {lr} must be finite and non-negative"));
            }
        }
        if self.demo_count == Some(0) {
            return Err(BcError::InsufficientData { needed: 1, got: 0 });
        }
        self.augmentation.validate()?;
        if self.cache == CacheMode::Force {
            if self.encoder.mode() != BackendMode::Frozen {
                return bad("feature caching requires a frozen pre-trained backbone".into());
            }
            if !self.augmentation.is_identity() {
                return bad("feature caching cannot be combined with augmentation, which needs pixel-space forwards".into());
            }
        }
        Ok(())
    }

    /// Whether training runs on cached backbone features.
    pub fn uses_cache(&self) -> bool {
        match self.cache {
            CacheMode::Off => false,
            CacheMode::Force => true,
            CacheMode::Auto => self.encoder.mode() == BackendMode::Frozen && self.augmentation.is_identity(),
        }
    }

    pub fn head_spec(&self) -> HeadSpec {
        self.head.clone().unwrap_or_else(|| HeadSpec {
            leading_batch_norm: self.encoder.is_pretrained(),
            ..HeadSpec::default()
        })
    }

    pub fn checkpoints(&self) -> usize {
        self.epochs / self.eval_every
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_schedules_rejected() {
        let c = BCConfig { epochs: 0, ..BCConfig::default() };
        assert!(matches!(c.validate(), Err(BcError::Config(_))));
        let c = BCConfig { epochs: 3, eval_every: 4, ..BCConfig::default() };
        assert!(c.validate().is_err());
        assert_eq!(BCConfig { epochs: 7, eval_every: 2, ..BCConfig::default() }.checkpoints(), 3);
    }

    #[test]
    fn forced_cache_needs_a_frozen_unaugmented_backbone() {
        let frozen = EncoderConfig::mock_pretrained(BackendMode::Frozen, 32);
        let c = BCConfig { encoder: frozen.clone(), cache: CacheMode::Force, ..BCConfig::default() };
        assert!(c.validate().is_ok() && c.uses_cache());
        let c = BCConfig { augmentation: AugmentationSpec::shift(4), ..c };
        assert!(matches!(c.validate(), Err(BcError::Config(_))));
        let c = BCConfig { cache: CacheMode::Force, ..BCConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn auto_cache_falls_back_under_augmentation() {
        let frozen = EncoderConfig::mock_pretrained(BackendMode::Frozen, 32);
        let c = BCConfig { encoder: frozen, ..BCConfig::default() };
        assert!(c.uses_cache());
        let c = BCConfig { augmentation: AugmentationSpec::shift(4), ..c };
        assert!(c.validate().is_ok() && !c.uses_cache());
        assert!(!BCConfig::default().uses_cache());
    }
}

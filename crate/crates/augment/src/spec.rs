use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::AugmentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    None,
    Shift,
    Jitter,
    Overlay,
    Composite,
}

impl FromStr for AugmentKind {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "none" => AugmentKind::None,
            "shift" => AugmentKind::Shift,
            "jitter" => AugmentKind::Jitter,
            "overlay" => AugmentKind::Overlay,
            "composite" => AugmentKind::Composite,
            other => return Err(AugmentError::Config(format!("unknown augmentation kind `{other}`"))),
        })
    }
}

/// Maximum deviations of the color-jitter factors. Brightness, contrast and
/// saturation factors are drawn from `[max(0, 1 - m), 1 + m]`; the hue
/// rotation from `[-hue, hue]` (in turns).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterParams {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
}

impl Default for JitterParams {
    fn default() -> Self {
        Self { brightness: 0.4, contrast: 0.4, saturation: 0.4, hue: 0.5 }
    }
}

impl JitterParams {
    pub fn zero() -> Self {
        Self { brightness: 0.0, contrast: 0.0, saturation: 0.0, hue: 0.0 }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("hue", self.hue),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AugmentError::InvalidParameter(format!("{name} magnitude {v} must be non-negative")));
            }
        }
        if self.hue > 0.5 {
            return Err(AugmentError::InvalidParameter(format!("hue magnitude {} exceeds 0.5", self.hue)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub kind: AugmentKind,
    /// Replicate padding in pixels (shift).
    pub pad: usize,
    pub jitter: JitterParams,
    /// Overlay mixing weight.
    pub alpha: f32,
    /// Kernels applied in order (composite).
    pub children: Vec<AugmentationSpec>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl AugmentationSpec {
    pub fn none() -> Self {
        Self { kind: AugmentKind::None, pad: 0, jitter: JitterParams::default(), alpha: 0.5, children: Vec::new() }
    }

    pub fn shift(pad: usize) -> Self {
        Self { kind: AugmentKind::Shift, pad, ..Self::none() }
    }

    pub fn jitter(params: JitterParams) -> Self {
        Self { kind: AugmentKind::Jitter, jitter: params, ..Self::none() }
    }

    pub fn overlay(alpha: f32) -> Self {
        Self { kind: AugmentKind::Overlay, alpha, ..Self::none() }
    }

    pub fn composite(children: Vec<AugmentationSpec>) -> Self {
        Self { kind: AugmentKind::Composite, children, ..Self::none() }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        match self.kind {
            AugmentKind::Jitter => self.jitter.validate()?,
            AugmentKind::Overlay if !(0.0..=1.0).contains(&self.alpha) => {
                return Err(AugmentError::InvalidParameter(format!("alpha {} outside [0, 1]", self.alpha)));
            }
            AugmentKind::Composite => {
                for c in &self.children {
                    c.validate()?;
                }
            }
            _ => {}
        }
        if self.kind != AugmentKind::Composite && !self.children.is_empty() {
            return Err(AugmentError::Config(format!("{:?} augmentation cannot have children", self.kind)));
        }
        Ok(())
    }

    /// Checks shift pads against a frame size.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<(), AugmentError> {
        self.validate()?;
        if self.kind == AugmentKind::Shift && 2 * self.pad > height.min(width) {
            return Err(AugmentError::InvalidPad { pad: self.pad, height, width });
        }
        self.children.iter().try_for_each(|c| c.validate_for(height, width))
    }

    pub fn uses_overlay(&self) -> bool {
        self.kind == AugmentKind::Overlay || self.children.iter().any(AugmentationSpec::uses_overlay)
    }

    pub fn uses_shift(&self) -> bool {
        self.kind == AugmentKind::Shift || self.children.iter().any(AugmentationSpec::uses_shift)
    }

    /// True when applying the spec can never change a batch.
    pub fn is_identity(&self) -> bool {
        match self.kind {
            AugmentKind::None => true,
            AugmentKind::Shift => self.pad == 0,
            AugmentKind::Jitter => self.jitter == JitterParams::zero(),
            AugmentKind::Overlay => self.alpha == 0.0,
            AugmentKind::Composite => self.children.iter().all(AugmentationSpec::is_identity),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind_is_a_config_error() {
        assert!(matches!("crop".parse::<AugmentKind>(), Err(AugmentError::Config(_))));
        assert_eq!("overlay".parse::<AugmentKind>().unwrap(), AugmentKind::Overlay);
    }

    #[test]
    fn rejects_large_hue_and_pad() {
        let mut j = JitterParams::default();
        j.hue = 0.6;
        assert!(AugmentationSpec::jitter(j).validate().is_err());
        assert!(matches!(AugmentationSpec::shift(9).validate_for(16, 20), Err(AugmentError::InvalidPad { .. })));
        assert!(AugmentationSpec::shift(8).validate_for(16, 20).is_ok());
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};
use vmc_core::texture::NoiseTexture;
use vmc_core::{Frame, RngPolicy};

use crate::{EnvError, EnvSpec, Environment, Palette, RenderStyle, StepResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    RandomColors,
    VideoBackground,
}

/// Where background video frames come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TextureSource {
    /// Drifting value noise, advanced every step.
    Procedural { scale: f32, octaves: u32 },
    /// Pre-decoded `[3, H, W]` unit-float frames, played in a loop from a
    /// per-episode offset.
    Frames(Vec<Vec<f32>>),
}

impl Default for TextureSource {
    fn default() -> Self {
        TextureSource::Procedural { scale: 5.0, octaves: 3 }
    }
}

/// Changes how the base environment looks, never how it behaves. Per-episode
/// randomness is keyed by `(seed, reset seed)`, so an episode is perturbed
/// identically whatever instance or order it runs in.
#[derive(Debug, Clone)]
pub struct PerturbationWrapper<E> {
    base: E,
    kind: Perturbation,
    magnitude: f32,
    seed: u64,
    texture: TextureSource,
    style: RenderStyle,
    episode_seed: u64,
    t: u64,
}

fn lerp(a: [f32; 3], b: [f32; 3], m: f32) -> [f32; 3] {
    [0, 1, 2].map(|c| (1.0 - m) * a[c] + m * b[c])
}

pub fn wrap_random_colors<E: Environment>(env: E, seed: u64, magnitude: f32) -> Result<PerturbationWrapper<E>, EnvError> {
    PerturbationWrapper::new(env, Perturbation::RandomColors, magnitude, seed, TextureSource::default())
}

pub fn wrap_video_background<E: Environment>(
    env: E,
    texture: TextureSource,
    seed: u64,
    magnitude: f32,
) -> Result<PerturbationWrapper<E>, EnvError> {
    PerturbationWrapper::new(env, Perturbation::VideoBackground, magnitude, seed, texture)
}

impl<E: Environment> PerturbationWrapper<E> {
    pub fn new(
        base: E,
        kind: Perturbation,
        magnitude: f32,
        seed: u64,
        texture: TextureSource,
    ) -> Result<Self, EnvError> {
        if !(0.0..=1.0).contains(&magnitude) {
            return Err(EnvError::InvalidState(format!("perturbation magnitude {magnitude} outside [0, 1]")));
        }
        base.base_palette()?;
        base.foreground_mask()?;
        if let TextureSource::Frames(f) = &texture {
            let fl = base.spec().frame.len();
            if f.is_empty() || f.iter().any(|x| x.len() != fl) {
                return Err(EnvError::InvalidState("background frames are empty or mis-sized".into()));
            }
        }
        Ok(Self { base, kind, magnitude, seed, texture, style: RenderStyle::default(), episode_seed: 0, t: 0 })
    }

    pub fn base(&self) -> &E {
        &self.base
    }

    pub fn kind(&self) -> Perturbation {
        self.kind
    }

    fn policy(&self) -> RngPolicy {
        RngPolicy::new(self.seed)
    }

    fn episode_palette(&self) -> Result<Palette, EnvError> {
        let base = self.base.base_palette()?;
        let mut rng = self.policy().rng("wrapper/colors", self.episode_seed);
        let mut color = || [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
        let (agent, goal, f0, f1, bg) = (color(), color(), color(), color(), color());
        let m = self.magnitude;
        Ok(Palette {
            agent: lerp(base.agent, agent, m),
            goal: lerp(base.goal, goal, m),
            floor: [lerp(base.floor[0], f0, m), lerp(base.floor[1], f1, m)],
            background: lerp(base.background, bg, m),
        })
    }

    fn background_frame(&self) -> Vec<f32> {
        let spec = self.base.spec().frame;
        match &self.texture {
            TextureSource::Procedural { scale, octaves } => {
                let seed = self.policy().derive_seed("wrapper/video", self.episode_seed);
                NoiseTexture { seed, scale: *scale, octaves: *octaves }.render(spec.height, spec.width, self.t as f32 * 0.5)
            }
            TextureSource::Frames(frames) => {
                let offset = self.policy().derive_seed("wrapper/video", self.episode_seed) as usize;
                frames[(offset.wrapping_add(self.t as usize)) % frames.len()].clone()
            }
        }
    }

    fn restyle(&mut self) -> Result<Frame, EnvError> {
        match self.kind {
            Perturbation::RandomColors => {
                if self.t == 0 {
                    self.style = RenderStyle { palette: Some(self.episode_palette()?), background: None };
                }
            }
            Perturbation::VideoBackground => {
                self.style = RenderStyle { palette: None, background: Some((self.background_frame(), self.magnitude)) };
            }
        }
        self.base.render_styled(&self.style)
    }
}

impl<E: Environment> Environment for PerturbationWrapper<E> {
    fn spec(&self) -> EnvSpec {
        self.base.spec()
    }

    fn reset(&mut self, seed: u64) -> Result<Frame, EnvError> {
        self.base.reset(seed)?;
        self.episode_seed = seed;
        self.t = 0;
        self.restyle()
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult, EnvError> {
        let mut r = self.base.step(action)?;
        self.t += 1;
        r.observation = self.restyle()?;
        Ok(r)
    }

    fn proprio(&self) -> Option<Vec<f32>> {
        self.base.proprio()
    }

    fn privileged_state(&self) -> Option<Vec<f32>> {
        self.base.privileged_state()
    }

    fn foreground_mask(&self) -> Result<Vec<bool>, EnvError> {
        self.base.foreground_mask()
    }
}

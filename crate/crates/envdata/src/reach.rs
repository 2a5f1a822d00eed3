use rand::Rng;
use serde::{Deserialize, Serialize};
use vmc_core::texture::NoiseTexture;
use vmc_core::{Frame, FrameShape, RngPolicy};

use crate::{EnvError, EnvSpec, Environment, Palette, RenderStyle, StepResult};

pub const REACH_TASK_ID: &str = "synthetic_reach";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachConfig {
    /// Square frame side in pixels.
    pub resolution: usize,
    pub horizon: usize,
    /// Displacement per step at full action magnitude (per axis).
    pub max_speed: f32,
    pub success_radius: f32,
    pub agent_radius: f32,
    /// Outer half side of the goal marker, a square outline.
    pub goal_half_size: f32,
    /// Half side of a hollow interior of the goal marker (0 for solid).
    pub goal_inner_half_size: f32,
    /// Fraction of rows (from the top) showing background instead of floor.
    pub sky_fraction: f32,
    /// Start positions are drawn from `[margin, 1 - margin]^2`.
    pub spawn_margin: f32,
    /// Minimum start distance between agent and goal.
    pub min_start_distance: f32,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self::preset(84)
    }
}

impl ReachConfig {
    pub fn preset(resolution: usize) -> Self {
        Self {
            resolution,
            horizon: 50,
            max_speed: 0.1,
            success_radius: 0.05,
            agent_radius: 0.08,
            goal_half_size: 0.07,
            goal_inner_half_size: 0.0,
            sky_fraction: 0.25,
            spawn_margin: 0.1,
            min_start_distance: 0.2,
        }
    }
}

pub const BASE_PALETTE: Palette = Palette {
    agent: [0.9, 0.35, 0.2],
    goal: [0.2, 0.8, 0.3],
    floor: [[0.32, 0.32, 0.38], [0.46, 0.46, 0.52]],
    background: [0.25, 0.4, 0.75],
};

const CHECKER_TILES: f32 = 8.0;
const SUBSAMPLES: [f32; 2] = [0.25, 0.75];

/// A point agent steered toward a goal in the unit square, seen from above.
///
/// Image row 0 is `y = 0`. The agent is a disc and the goal a square, so
/// the two stay distinguishable under any recoloring.
#[derive(Debug, Clone)]
pub struct SyntheticReachEnv {
    config: ReachConfig,
    agent: [f32; 2],
    goal: [f32; 2],
    t: usize,
    done: bool,
    started: bool,
    sky_texture: Vec<f32>,
}

fn distance(a: [f32; 2], b: [f32; 2]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl SyntheticReachEnv {
    pub fn new(config: ReachConfig) -> Self {
        let r = config.resolution;
        let sky_texture = NoiseTexture { seed: 17, scale: 4.0, octaves: 2 }.render(r, r, 0.0)[..r * r].to_vec();
        Self { config, agent: [0.0; 2], goal: [0.0; 2], t: 0, done: true, started: false, sky_texture }
    }

    pub fn config(&self) -> &ReachConfig {
        &self.config
    }

    pub fn agent(&self) -> [f32; 2] {
        self.agent
    }

    pub fn goal(&self) -> [f32; 2] {
        self.goal
    }

    pub fn distance(&self) -> f32 {
        distance(self.agent, self.goal)
    }

    /// Starts an episode from explicit positions.
    pub fn reset_to(&mut self, agent: [f32; 2], goal: [f32; 2]) -> Frame {
        self.agent = agent.map(|v| v.clamp(0.0, 1.0));
        self.goal = goal.map(|v| v.clamp(0.0, 1.0));
        self.t = 0;
        self.done = false;
        self.started = true;
        self.render(&RenderStyle::default())
    }

    fn is_sky(&self, y: usize) -> bool {
        ((y as f32 + 0.5) / self.config.resolution as f32) < self.config.sky_fraction
    }

    /// Agent and goal coverage of pixel `(x, y)` in `[0, 1]`.
    fn coverage(&self, x: usize, y: usize) -> (f32, f32) {
        let r = self.config.resolution as f32;
        let (mut ca, mut cg) = (0.0, 0.0);
        for sy in SUBSAMPLES {
            for sx in SUBSAMPLES {
                let p = [(x as f32 + sx) / r, (y as f32 + sy) / r];
                if distance(p, self.agent) <= self.config.agent_radius {
                    ca += 0.25;
                }
                let cheb = (p[0] - self.goal[0]).abs().max((p[1] - self.goal[1]).abs());
                if cheb <= self.config.goal_half_size && cheb >= self.config.goal_inner_half_size {
                    cg += 0.25;
                }
            }
        }
        (ca, cg)
    }

    fn render(&self, style: &RenderStyle) -> Frame {
        let res = self.config.resolution;
        let plane = res * res;
        let pal = style.palette.unwrap_or(BASE_PALETTE);
        let mut out = vec![0.0f32; 3 * plane];
        for y in 0..res {
            let sky = self.is_sky(y);
            for x in 0..res {
                let k = y * res + x;
                let (ca, cg) = self.coverage(x, y);
                let mut px = if sky {
                    let m = 0.85 + 0.3 * self.sky_texture[k];
                    pal.background.map(|c| (c * m).min(1.0))
                } else {
                    let tx = ((x as f32 + 0.5) / res as f32 * CHECKER_TILES) as usize;
                    let ty = ((y as f32 + 0.5) / res as f32 * CHECKER_TILES) as usize;
                    pal.floor[(tx + ty) % 2]
                };
                if sky && ca == 0.0 && cg == 0.0 {
                    if let Some((tex, opacity)) = &style.background {
                        for c in 0..3 {
                            px[c] = (1.0 - opacity) * px[c] + opacity * tex[c * plane + k];
                        }
                    }
                }
                for c in 0..3 {
                    let v = px[c] * (1.0 - cg) + pal.goal[c] * cg;
                    out[c * plane + k] = v * (1.0 - ca) + pal.agent[c] * ca;
                }
            }
        }
        Frame::from_unit(FrameShape::new(3, res, res), &out).expect("frame size matches resolution")
    }
}

impl Environment for SyntheticReachEnv {
    fn spec(&self) -> EnvSpec {
        let r = self.config.resolution;
        EnvSpec {
            task_id: REACH_TASK_ID.into(),
            frame: FrameShape::new(3, r, r),
            action_dim: 2,
            action_low: -1.0,
            action_high: 1.0,
            proprio_dim: 2,
            horizon: self.config.horizon,
        }
    }

    fn reset(&mut self, seed: u64) -> Result<Frame, EnvError> {
        let mut rng = RngPolicy::new(seed).rng("reach/reset", 0);
        let (lo, hi) = (self.config.spawn_margin, 1.0 - self.config.spawn_margin);
        loop {
            let agent = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
            let goal = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
            if distance(agent, goal) >= self.config.min_start_distance {
                return Ok(self.reset_to(agent, goal));
            }
        }
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult, EnvError> {
        if !self.started || self.done {
            return Err(EnvError::InvalidState("step called on a finished episode; reset first".into()));
        }
        if action.len() != 2 || action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::InvalidAction(format!("expected 2 finite values, got {action:?}")));
        }
        for (p, a) in self.agent.iter_mut().zip(action) {
            *p = (*p + self.config.max_speed * a.clamp(-1.0, 1.0)).clamp(0.0, 1.0);
        }
        self.t += 1;
        let d = self.distance();
        let success = d < self.config.success_radius;
        self.done = success || self.t >= self.config.horizon;
        Ok(StepResult { observation: self.render(&RenderStyle::default()), reward: -d, done: self.done, success })
    }

    fn proprio(&self) -> Option<Vec<f32>> {
        Some(self.agent.to_vec())
    }

    fn privileged_state(&self) -> Option<Vec<f32>> {
        Some(vec![self.agent[0], self.agent[1], self.goal[0], self.goal[1]])
    }

    fn render_styled(&self, style: &RenderStyle) -> Result<Frame, EnvError> {
        if let Some((tex, _)) = &style.background {
            let r = self.config.resolution;
            if tex.len() != 3 * r * r {
                return Err(EnvError::InvalidState(format!("background texture has {} values", tex.len())));
            }
        }
        Ok(self.render(style))
    }

    fn foreground_mask(&self) -> Result<Vec<bool>, EnvError> {
        let r = self.config.resolution;
        Ok((0..r * r)
            .map(|k| {
                let (ca, cg) = self.coverage(k % r, k / r);
                ca > 0.0 || cg > 0.0
            })
            .collect())
    }

    fn base_palette(&self) -> Result<Palette, EnvError> {
        Ok(BASE_PALETTE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_before_reset_is_invalid() {
        let mut env = SyntheticReachEnv::new(ReachConfig::preset(16));
        assert!(matches!(env.step(&[0.0, 0.0]), Err(EnvError::InvalidState(_))));
    }

    #[test]
    fn positions_stay_in_the_unit_square() {
        let mut env = SyntheticReachEnv::new(ReachConfig::preset(16));
        env.reset_to([0.05, 0.95], [0.5, 0.5]);
        let r = env.step(&[-5.0, 5.0]).unwrap();
        assert_eq!(env.agent(), [0.0, 1.0]);
        assert!(r.reward <= 0.0 && r.reward >= -std::f32::consts::SQRT_2);
    }

    #[test]
    fn success_terminates() {
        let mut env = SyntheticReachEnv::new(ReachConfig::preset(16));
        env.reset_to([0.5, 0.5], [0.53, 0.5]);
        let r = env.step(&[0.3, 0.0]).unwrap();
        assert!(r.success && r.done);
        assert!(env.step(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn horizon_ends_episodes() {
        let mut env = SyntheticReachEnv::new(ReachConfig::preset(16));
        env.reset_to([0.1, 0.1], [0.9, 0.9]);
        let mut steps = 0;
        loop {
            steps += 1;
            if env.step(&[0.0, 0.0]).unwrap().done {
                break;
            }
        }
        assert_eq!(steps, 50);
    }

    #[test]
    fn agent_pixels_follow_the_agent() {
        let mut env = SyntheticReachEnv::new(ReachConfig::preset(32));
        let a = env.reset_to([0.3, 0.6], [0.8, 0.8]);
        let b = env.reset_to([0.6, 0.6], [0.8, 0.8]);
        assert_ne!(a, b);
        let mask = env.foreground_mask().unwrap();
        // pixel under the agent center
        assert!(mask[(0.6 * 32.0) as usize * 32 + (0.6 * 32.0) as usize]);
        assert!(!mask[0]);
    }
}

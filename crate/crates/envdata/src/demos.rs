use vmc_core::{DemoDataset, EpisodeRecord, RngPolicy};

use crate::{EnvError, Environment};

/// Proportional controller toward the goal. `state` is `[ax, ay, gx, gy]`;
/// the command is scaled so a full-norm action covers `max_speed`, then
/// clipped to unit norm.
pub fn scripted_expert(state: &[f32], max_speed: f32) -> Vec<f32> {
    let e = [(state[2] - state[0]) / max_speed, (state[3] - state[1]) / max_speed];
    let n = (e[0] * e[0] + e[1] * e[1]).sqrt();
    if n > 1.0 {
        vec![e[0] / n, e[1] / n]
    } else {
        e.to_vec()
    }
}

pub trait Expert {
    fn act(&mut self, env: &dyn Environment) -> Result<Vec<f32>, EnvError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedExpert {
    pub max_speed: f32,
}

impl Default for ScriptedExpert {
    fn default() -> Self {
        Self { max_speed: 0.1 }
    }
}

impl Expert for ScriptedExpert {
    fn act(&mut self, env: &dyn Environment) -> Result<Vec<f32>, EnvError> {
        let s = env
            .privileged_state()
            .ok_or_else(|| EnvError::Unsupported("privileged state for the scripted expert".into()))?;
        if s.len() != 4 {
            return Err(EnvError::Unsupported(format!("{}-dim privileged state", s.len())));
        }
        Ok(scripted_expert(&s, self.max_speed))
    }
}

/// Runs one episode from `reset(seed)`. Step `t` of the record holds the
/// observation the action was chosen from and the reward it earned.
pub fn rollout_expert<E: Environment>(env: &mut E, expert: &mut dyn Expert, seed: u64) -> Result<EpisodeRecord, EnvError> {
    let mut obs = env.reset(seed)?;
    let mut rec = EpisodeRecord { observations: vec![], actions: vec![], rewards: vec![], success: false };
    loop {
        let a = expert.act(env)?;
        let r = env.step(&a)?;
        rec.observations.push(std::mem::replace(&mut obs, r.observation));
        rec.actions.push(a);
        rec.rewards.push(r.reward);
        if r.done {
            rec.success = r.success;
            return Ok(rec);
        }
    }
}

/// Collects `n` successful expert episodes. Attempt `i` resets with the
/// seed derived from `(seed, "demos", i)`; failures are dropped and counted.
pub fn generate_demos<E: Environment>(
    env: &mut E,
    expert: &mut dyn Expert,
    n: usize,
    seed: u64,
) -> Result<DemoDataset, EnvError> {
    if n == 0 {
        return Err(EnvError::InvalidState("need at least one demonstration".into()));
    }
    let policy = RngPolicy::new(seed);
    let max_attempts = 4 * n;
    let mut episodes = Vec::with_capacity(n);
    let mut attempts = 0;
    while episodes.len() < n {
        if attempts == max_attempts {
            return Err(EnvError::ExpertFailure { successes: episodes.len(), attempts, needed: n });
        }
        let ep = rollout_expert(env, expert, policy.derive_seed("demos", attempts as u64))?;
        attempts += 1;
        if ep.success {
            episodes.push(ep);
        }
    }
    let spec = env.spec();
    Ok(DemoDataset::new(spec.task_id, spec.action_dim, spec.frame, episodes)?)
}

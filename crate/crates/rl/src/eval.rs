use rand::Rng;
use serde::{Deserialize, Serialize};
use vmc_core::{normalize_return, Frame, ObservationBatch, RngPolicy};
use vmc_envdata::{Environment, Expert};

use crate::RlError;

/// Deterministic action selection for evaluation.
pub trait ActingPolicy {
    fn frame_stack(&self) -> usize;

    fn greedy(&self, obs: &ObservationBatch, proprio: &[Vec<f32>]) -> Result<Vec<Vec<f32>>, RlError>;
}

/// Returns of the reference policies that anchor normalized return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnBounds {
    pub lo: f64,
    pub hi: f64,
}

impl ReturnBounds {
    pub fn normalize(&self, raw: f64) -> Result<f64, RlError> {
        Ok(normalize_return(raw, self.lo, self.hi)?)
    }
}

struct Slot {
    stack: Vec<Frame>,
    ret: f64,
    done: bool,
}

/// Mean undiscounted return and success rate over one episode per seed,
/// `envs.len()` episodes at a time.
pub fn evaluate_returns<E: Environment>(
    policy: &dyn ActingPolicy,
    envs: &mut [E],
    seeds: &[u64],
) -> Result<(f64, f64), RlError> {
    rollout_returns(envs, seeds, policy.frame_stack(), &mut |obs, proprio, _| policy.greedy(obs, proprio))
}

type Act<'a> = dyn FnMut(&ObservationBatch, &[Vec<f32>], &[usize]) -> Result<Vec<Vec<f32>>, RlError> + 'a;

fn rollout_returns<E: Environment>(envs: &mut [E], seeds: &[u64], depth: usize, act: &mut Act<'_>) -> Result<(f64, f64), RlError> {
    if envs.is_empty() || seeds.is_empty() {
        return Err(RlError::InsufficientData { needed: 1, got: 0 });
    }
    let spec = envs[0].spec();
    let (mut total, mut successes) = (0.0, 0usize);
    for wave in seeds.chunks(envs.len()) {
        let mut slots = Vec::with_capacity(wave.len());
        for (env, &s) in envs.iter_mut().zip(wave) {
            let f = env.reset(s)?;
            slots.push(Slot { stack: vec![f; depth], ret: 0.0, done: false });
        }
        loop {
            let active: Vec<usize> = (0..slots.len()).filter(|&i| !slots[i].done).collect();
            if active.is_empty() {
                break;
            }
            let stacks: Vec<Vec<&Frame>> = active.iter().map(|&i| slots[i].stack.iter().collect()).collect();
            let proprio: Vec<Vec<f32>> = active.iter().map(|&i| envs[i].proprio().unwrap_or_default()).collect();
            let actions = act(&ObservationBatch::from_frames(&stacks)?, &proprio, &active)?;
            for (&i, a) in active.iter().zip(actions) {
                let a: Vec<f32> = a.iter().map(|v| v.clamp(spec.action_low, spec.action_high)).collect();
                let r = envs[i].step(&a)?;
                let s = &mut slots[i];
                s.ret += r.reward as f64;
                s.done = r.done;
                successes += r.success as usize;
                s.stack.remove(0);
                s.stack.push(r.observation);
            }
        }
        total += slots.iter().map(|s| s.ret).sum::<f64>();
    }
    Ok((total / seeds.len() as f64, successes as f64 / seeds.len() as f64))
}

/// `lo` is the mean return of uniformly random actions, `hi` that of
/// `expert`, on the same seeds.
pub fn reference_bounds<E: Environment>(
    envs: &mut [E],
    expert: &mut dyn Expert,
    seeds: &[u64],
) -> Result<ReturnBounds, RlError> {
    let dim = envs.first().map(|e| e.spec().action_dim).unwrap_or(0);
    let noise = RngPolicy::new(0);
    let mut step = 0u64;
    let (lo, _) = rollout_returns(envs, seeds, 1, &mut |obs, _, _| {
        step += 1;
        let mut r = noise.rng("rl/random_policy", step);
        Ok((0..obs.len()).map(|_| (0..dim).map(|_| r.random_range(-1.0f32..=1.0)).collect()).collect())
    })?;
    let mut hi = 0.0;
    for &s in seeds {
        let env = &mut envs[0];
        env.reset(s)?;
        loop {
            let a = expert.act(&*env)?;
            let r = env.step(&a)?;
            hi += r.reward as f64;
            if r.done {
                break;
            }
        }
    }
    let hi = hi / seeds.len() as f64;
    if !(hi > lo) {
        return Err(RlError::Config(format!("expert return {hi} does not exceed random return {lo}")));
    }
    Ok(ReturnBounds { lo, hi })
}

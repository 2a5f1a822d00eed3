use vmc_core::{Frame, ObservationBatch, RngPolicy};
use vmc_envdata::Environment;

use crate::policy::BcPolicy;
use crate::BcError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub success_rate: f64,
    pub mean_return: f64,
    pub episodes: usize,
}

/// The fixed evaluation seeds of an experiment; every checkpoint is scored
/// on the same episodes.
pub fn eval_seeds(seed: u64, n: usize) -> Vec<u64> {
    let p = RngPolicy::new(seed);
    (0..n as u64).map(|i| p.derive_seed("bc/eval", i)).collect()
}

struct Slot {
    history: Vec<Frame>,
    ret: f64,
    done: bool,
    success: bool,
}

/// Rolls out one episode per seed, `envs.len()` at a time in lockstep so the
/// policy runs batched. Outcomes do not depend on how many environments are
/// supplied.
pub fn evaluate<E: Environment>(policy: &BcPolicy, envs: &mut [E], seeds: &[u64]) -> Result<EvalStats, BcError> {
    if envs.is_empty() || seeds.is_empty() {
        return Err(BcError::InsufficientData { needed: 1, got: envs.len().min(seeds.len()) });
    }
    let spec = envs[0].spec();
    let depth = policy.frame_stack();
    let (mut successes, mut total) = (0usize, 0.0f64);
    for wave in seeds.chunks(envs.len()) {
        let mut slots = Vec::with_capacity(wave.len());
        for (env, &s) in envs.iter_mut().zip(wave) {
            let f = env.reset(s)?;
            slots.push(Slot { history: vec![f; depth], ret: 0.0, done: false, success: false });
        }
        loop {
            let active: Vec<usize> = (0..slots.len()).filter(|&i| !slots[i].done).collect();
            if active.is_empty() {
                break;
            }
            let stacks: Vec<Vec<&Frame>> = active.iter().map(|&i| slots[i].history.iter().collect()).collect();
            let actions = policy.act(&ObservationBatch::from_frames(&stacks)?)?;
            for (&i, a) in active.iter().zip(actions) {
                let a: Vec<f32> = a.iter().map(|v| v.clamp(spec.action_low, spec.action_high)).collect();
                let r = envs[i].step(&a)?;
                let slot = &mut slots[i];
                slot.ret += r.reward as f64;
                slot.done = r.done;
                slot.success = r.success;
                slot.history.remove(0);
                slot.history.push(r.observation);
            }
        }
        successes += slots.iter().filter(|s| s.success).count();
        total += slots.iter().map(|s| s.ret).sum::<f64>();
    }
    let n = seeds.len();
    Ok(EvalStats { success_rate: successes as f64 / n as f64, mean_return: total / n as f64, episodes: n })
}

use vmc_core::{DemoDataset, RngPolicy};
use vmc_envdata::{generate_demos, load_demos, wrap_random_colors, PerturbationWrapper, ScriptedExpert, SyntheticReachEnv};
use vmc_rl::{reference_bounds, ReturnBounds};

use crate::config::{ExperimentConfig, PerturbationConfig};
use crate::BenchError;

const MAX_REFERENCE_ENVS: usize = 16;

pub fn make_task(config: &ExperimentConfig) -> SyntheticReachEnv {
    SyntheticReachEnv::new(config.task)
}

pub fn perturbed_task(
    config: &ExperimentConfig,
    p: &PerturbationConfig,
) -> Result<PerturbationWrapper<SyntheticReachEnv>, BenchError> {
    Ok(wrap_random_colors(make_task(config), p.seed, p.magnitude)?)
}

/// Loads `demos.dir` when set, otherwise rolls out the scripted expert.
pub fn load_or_generate_demos(config: &ExperimentConfig) -> Result<DemoDataset, BenchError> {
    if let Some(dir) = &config.demos.dir {
        return Ok(load_demos(dir)?);
    }
    let mut expert = ScriptedExpert { max_speed: config.demos.max_speed };
    Ok(generate_demos(&mut make_task(config), &mut expert, config.demos.count, config.demos.seed)?)
}

/// Random-policy and scripted-expert returns on fixed seeds of the task.
pub fn reference_bounds_for(config: &ExperimentConfig) -> Result<ReturnBounds, BenchError> {
    let n = config.rl.reference_episodes;
    let mut envs: Vec<_> = (0..n.min(MAX_REFERENCE_ENVS)).map(|_| make_task(config)).collect();
    let policy = RngPolicy::new(0);
    let seeds: Vec<u64> = (0..n as u64).map(|i| policy.derive_seed("bench/reference", i)).collect();
    let mut expert = ScriptedExpert { max_speed: config.demos.max_speed };
    Ok(reference_bounds(&mut envs, &mut expert, &seeds)?)
}

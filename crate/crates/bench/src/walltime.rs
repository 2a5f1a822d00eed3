use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use vmc_core::RngPolicy;
use vmc_imitation::{evaluate, BcTrainer};
use vmc_envdata::Environment;
use vmc_rl::{evaluate_returns, ActingPolicy, OffPolicyTrainer, OnPolicyTrainer, ReturnBounds, TrainBudget};

use crate::config::{Algorithm, ExperimentConfig, Method};
use crate::tasks::{load_or_generate_demos, make_task};
use crate::BenchError;

const MIN_WARMUP: usize = 3;
const MIN_ITERATIONS: usize = 10;
/// A sample shorter than this many timer ticks is re-measured over a batch
/// of repetitions.
const RESOLUTION_FACTOR: u32 = 1000;

/// Post-warm-up samples of one operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Seconds per operation.
    pub median: f64,
    pub samples: Vec<f64>,
    /// Operations per sample; above 1 when a single operation was too short
    /// for the timer.
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalltimeTable {
    pub method: Method,
    pub algorithm: Algorithm,
    pub used_cache: bool,
    pub train_seconds_per_iteration: Option<f64>,
    pub inference_seconds_per_episode: f64,
    pub seconds_per_1k_frames: Option<f64>,
    pub warmup: usize,
    pub iterations: usize,
    pub train: Option<Timing>,
    pub inference: Timing,
    pub frames: Option<Timing>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Runs `op` `warmup` times untimed, then `iterations` timed samples, and
/// returns their median. Operations too short for the timer are timed in
/// batches and the per-operation mean of each batch is used as the sample.
pub fn time_op(
    warmup: usize,
    iterations: usize,
    op: &mut dyn FnMut() -> Result<(), BenchError>,
) -> Result<Timing, BenchError> {
    if iterations == 0 {
        return Err(BenchError::Config("need at least one timed iteration".into()));
    }
    let mut last = Duration::ZERO;
    for _ in 0..warmup.max(1) {
        let t = Instant::now();
        op()?;
        last = t.elapsed();
    }
    let floor = timer_resolution() * RESOLUTION_FACTOR;
    let repetitions = if last < floor {
        let reps = (floor.as_secs_f64() / last.as_secs_f64().max(1e-9)).ceil() as usize;
        log::warn!("operation takes {last:?}, below the timer's reliable range; timing batches of {reps}");
        reps.max(2)
    } else {
        1
    };
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        for _ in 0..repetitions {
            op()?;
        }
        samples.push(t.elapsed().as_secs_f64() / repetitions as f64);
    }
    Ok(Timing { median: median(&samples), samples, repetitions })
}

/// Median training and inference cost of the configured method. BC
/// reports seconds per gradient iteration and per evaluation episode; RL
/// reports seconds per 1000 environment frames (collection plus updates).
pub fn measure_walltime(config: &ExperimentConfig, iterations: usize) -> Result<WalltimeTable, BenchError> {
    config.validate()?;
    let warmup = config.walltime.warmup;
    if iterations < MIN_ITERATIONS || warmup < MIN_WARMUP {
        return Err(BenchError::Config(format!(
            "wall-time needs >= {MIN_ITERATIONS} iterations after >= {MIN_WARMUP} warm-up ones, got {iterations} and {warmup}"
        )));
    }
    let seed = config.seeds[0];
    let episode_seeds = RngPolicy::new(seed).child("bench/walltime", 0);
    let mut env = vec![make_task(config)];
    match config.algorithm {
        Algorithm::Bc => {
            let demos = load_or_generate_demos(config)?;
            let cache = std::env::var_os("VMC_CACHE_DIR").map(std::path::PathBuf::from);
            let mut trainer = BcTrainer::with_cache_dir(&config.bc_config(seed)?, &demos, cache.as_deref())?;
            let train = time_op(warmup, iterations, &mut || trainer.iteration().map(|_| ()).map_err(Into::into))?;
            let mut k = 0;
            let inference = time_op(warmup, iterations, &mut || {
                k += 1;
                evaluate(trainer.policy(), &mut env, &[episode_seeds.derive_seed("episode", k)])?;
                Ok(())
            })?;
            Ok(WalltimeTable {
                method: config.method,
                algorithm: config.algorithm,
                used_cache: trainer.uses_cache(),
                train_seconds_per_iteration: Some(train.median),
                inference_seconds_per_episode: inference.median,
                seconds_per_1k_frames: None,
                warmup,
                iterations,
                train: Some(train),
                inference,
                frames: None,
            })
        }
        Algorithm::Offpolicy => {
            let cfg = config.offpolicy_config(seed)?;
            let seed_steps = cfg.seed_steps;
            let mut t = OffPolicyTrainer::new(cfg, timing_budget(), TIMING_BOUNDS, &|| make_task(config))?;
            t.run_until(seed_steps)?;
            rl_table(config, warmup, iterations, &mut env, &episode_seeds, &mut t)
        }
        Algorithm::Onpolicy => {
            let cfg = config.onpolicy_config(seed)?;
            let mut t = OnPolicyTrainer::new(cfg, timing_budget(), TIMING_BOUNDS, &|| make_task(config))?;
            rl_table(config, warmup, iterations, &mut env, &episode_seeds, &mut t)
        }
    }
}

/// Scores are never computed during timing runs, so the bounds are inert.
const TIMING_BOUNDS: ReturnBounds = ReturnBounds { lo: -1.0, hi: 0.0 };

fn timing_budget() -> TrainBudget {
    TrainBudget { total_steps: u64::MAX / 4, eval_every: 1 << 40, eval_episodes: 1, target: None }
}

trait TimedTrainer {
    fn advance(&mut self, limit: u64) -> Result<u64, BenchError>;
    fn steps(&self) -> u64;
    fn policy(&self) -> &dyn ActingPolicy;
}

impl<E: Environment> TimedTrainer for OffPolicyTrainer<E> {
    fn advance(&mut self, limit: u64) -> Result<u64, BenchError> {
        self.run_until(limit)?;
        Ok(self.env_steps())
    }

    fn steps(&self) -> u64 {
        self.env_steps()
    }

    fn policy(&self) -> &dyn ActingPolicy {
        self.agent()
    }
}

impl<E: Environment> TimedTrainer for OnPolicyTrainer<E> {
    fn advance(&mut self, limit: u64) -> Result<u64, BenchError> {
        self.run_until(limit)?;
        Ok(self.env_steps())
    }

    fn steps(&self) -> u64 {
        self.env_steps()
    }

    fn policy(&self) -> &dyn ActingPolicy {
        self.agent()
    }
}

/// Each sample advances training by at least `rl_chunk` frames and is
/// normalized by the frames actually collected.
fn rl_table<E: Environment>(
    config: &ExperimentConfig,
    warmup: usize,
    iterations: usize,
    env: &mut [E],
    episode_seeds: &RngPolicy,
    t: &mut dyn TimedTrainer,
) -> Result<WalltimeTable, BenchError> {
    let chunk = config.walltime.rl_chunk;
    let mut samples = Vec::with_capacity(iterations);
    for i in 0..warmup + iterations {
        let start = t.steps();
        let clock = Instant::now();
        let end = t.advance(start + chunk)?;
        let secs = clock.elapsed().as_secs_f64();
        if i >= warmup {
            samples.push(secs * 1000.0 / (end - start).max(1) as f64);
        }
    }
    let frames = Timing { median: median(&samples), samples, repetitions: 1 };
    let mut k = 0;
    let inference = time_op(warmup, iterations, &mut || {
        k += 1;
        evaluate_returns(t.policy(), env, &[episode_seeds.derive_seed("episode", k)])?;
        Ok(())
    })?;
    Ok(WalltimeTable {
        method: config.method,
        algorithm: config.algorithm,
        used_cache: false,
        train_seconds_per_iteration: None,
        inference_seconds_per_episode: inference.median,
        seconds_per_1k_frames: Some(frames.median),
        warmup,
        iterations,
        train: None,
        inference,
        frames: Some(frames),
    })
}

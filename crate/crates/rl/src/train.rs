use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use vmc_core::{MetricKind, MetricSeries, RngPolicy};
use vmc_envdata::Environment;

use crate::checkpoint::Checkpoint;
use crate::eval::{evaluate_returns, ActingPolicy, ReturnBounds};
use crate::offpolicy::{OffPolicyAgent, OffPolicyConfig, OffPolicyLosses};
use crate::onpolicy::{OnPolicyAgent, OnPolicyConfig, OnPolicyLosses};
use crate::replay::ReplayBuffer;
use crate::rollout::{Collector, CollectorState, RolloutAgent};
use crate::RlError;

const MAX_EVAL_ENVS: usize = 16;

/// How long to train and how often to score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBudget {
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Stop once a checkpoint reaches this normalized return.
    pub target: Option<f64>,
}

impl Default for TrainBudget {
    fn default() -> Self {
        Self { total_steps: 100_000, eval_every: 5_000, eval_episodes: 10, target: None }
    }
}

impl TrainBudget {
    fn validate(&self) -> Result<(), RlError> {
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(RlError::Config("evaluation interval and episode count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlResult {
    /// Normalized return keyed by environment step.
    pub series: MetricSeries,
    pub raw_returns: Vec<(u64, f64)>,
    pub success_rates: Vec<(u64, f64)>,
    pub env_steps: u64,
    pub updates: u64,
    /// First checkpoint at or above the target, if any.
    pub reached: Option<u64>,
    pub seconds: f64,
}

impl RlResult {
    /// Equality ignoring wall time.
    pub fn same_metrics(&self, other: &RlResult) -> bool {
        self.series == other.series
            && self.raw_returns == other.raw_returns
            && self.success_rates == other.success_rates
            && (self.env_steps, self.updates, self.reached) == (other.env_steps, other.updates, other.reached)
    }
}

/// Scores, counters and evaluation state common to both trainers.
struct Tracker<E> {
    budget: TrainBudget,
    bounds: ReturnBounds,
    eval_envs: Vec<E>,
    eval_seeds: Vec<u64>,
    series: MetricSeries,
    raw: Vec<(u64, f64)>,
    success: Vec<(u64, f64)>,
    next_eval: u64,
    reached: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct TrackerState {
    series: MetricSeries,
    raw: Vec<(u64, f64)>,
    success: Vec<(u64, f64)>,
    next_eval: u64,
    reached: Option<u64>,
}

impl<E: Environment> Tracker<E> {
    fn new(budget: TrainBudget, bounds: ReturnBounds, seed: u64, make_env: &dyn Fn() -> E) -> Result<Self, RlError> {
        budget.validate()?;
        let p = RngPolicy::new(seed);
        Ok(Self {
            budget,
            bounds,
            eval_envs: (0..budget.eval_episodes.min(MAX_EVAL_ENVS)).map(|_| make_env()).collect(),
            eval_seeds: (0..budget.eval_episodes as u64).map(|i| p.derive_seed("rl/eval", i)).collect(),
            series: MetricSeries::new(MetricKind::NormalizedReturn),
            raw: Vec::new(),
            success: Vec::new(),
            next_eval: budget.eval_every,
            reached: None,
        })
    }

    fn maybe_eval(&mut self, policy: &dyn ActingPolicy, steps: u64) -> Result<(), RlError> {
        if steps < self.next_eval {
            return Ok(());
        }
        while self.next_eval <= steps {
            self.next_eval += self.budget.eval_every;
        }
        let (ret, success) = evaluate_returns(policy, &mut self.eval_envs, &self.eval_seeds)?;
        let score = self.bounds.normalize(ret)?;
        log::info!("step {steps}: return {ret:.3} (normalized {score:.3}), success {success:.2}");
        self.series.push(steps, score)?;
        self.raw.push((steps, ret));
        self.success.push((steps, success));
        if self.reached.is_none() && self.budget.target.is_some_and(|t| score >= t) {
            self.reached = Some(steps);
        }
        Ok(())
    }

    fn finished(&self, steps: u64, limit: u64) -> bool {
        steps >= limit.min(self.budget.total_steps) || (self.budget.target.is_some() && self.reached.is_some())
    }

    fn state(&self) -> TrackerState {
        TrackerState {
            series: self.series.clone(),
            raw: self.raw.clone(),
            success: self.success.clone(),
            next_eval: self.next_eval,
            reached: self.reached,
        }
    }

    fn restore(&mut self, s: TrackerState) {
        self.series = s.series;
        self.raw = s.raw;
        self.success = s.success;
        self.next_eval = s.next_eval;
        self.reached = s.reached;
    }

    fn result(&self, env_steps: u64, updates: u64, seconds: f64) -> RlResult {
        RlResult {
            series: self.series.clone(),
            raw_returns: self.raw.clone(),
            success_rates: self.success.clone(),
            env_steps,
            updates,
            reached: self.reached,
            seconds,
        }
    }
}

/// Interleaves collection, replay storage and updates for the off-policy
/// agent: once `seed_steps` have been collected, one update every
/// `update_every` environment steps.
pub struct OffPolicyTrainer<E: Environment> {
    agent: OffPolicyAgent,
    collector: Collector<E>,
    replay: ReplayBuffer,
    tracker: Tracker<E>,
    last: Option<OffPolicyLosses>,
    seconds: f64,
}

impl<E: Environment> OffPolicyTrainer<E> {
    pub fn new(
        config: OffPolicyConfig,
        budget: TrainBudget,
        bounds: ReturnBounds,
        make_env: &dyn Fn() -> E,
    ) -> Result<Self, RlError> {
        config.validate()?;
        let envs: Vec<E> = (0..config.num_envs).map(|_| make_env()).collect();
        let collector = Collector::new(envs, RngPolicy::new(config.seed).derive_seed("rl/collect", 0), config.frame_stack)?;
        let spec = collector.spec();
        let replay = ReplayBuffer::new(config.replay_capacity, config.n_step, config.gamma, config.frame_stack)?;
        let tracker = Tracker::new(budget, bounds, config.seed, make_env)?;
        let agent = OffPolicyAgent::new(config, spec.frame, spec.action_dim)?;
        Ok(Self { agent, collector, replay, tracker, last: None, seconds: 0.0 })
    }

    pub fn agent(&self) -> &OffPolicyAgent {
        &self.agent
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn env_steps(&self) -> u64 {
        self.collector.env_steps()
    }

    pub fn last_losses(&self) -> Option<OffPolicyLosses> {
        self.last
    }

    fn due_updates(&self) -> u64 {
        let c = self.agent.config();
        self.collector.env_steps().saturating_sub(c.seed_steps) / c.update_every
    }

    /// Trains until `limit` environment steps (capped by the budget) or
    /// the target score.
    pub fn run_until(&mut self, limit: u64) -> Result<RlResult, RlError> {
        let start = Instant::now();
        while !self.tracker.finished(self.collector.env_steps(), limit) {
            self.agent.set_env_step(self.collector.env_steps());
            let rollout = self.collector.collect(&mut self.agent, 1)?;
            for id in &rollout.discarded {
                self.replay.discard(*id);
            }
            for s in &rollout.segments {
                self.replay.add_segment(s);
            }
            let steps = self.collector.env_steps();
            self.agent.set_env_step(steps);
            while self.agent.updates() < self.due_updates() && self.replay.sampleable() >= self.agent.config().batch_size {
                self.last = Some(self.agent.update(&self.replay)?);
            }
            self.tracker.maybe_eval(&self.agent, steps)?;
        }
        self.seconds += start.elapsed().as_secs_f64();
        Ok(self.result())
    }

    pub fn run(&mut self) -> Result<RlResult, RlError> {
        self.run_until(u64::MAX)
    }

    pub fn result(&self) -> RlResult {
        self.tracker.result(self.collector.env_steps(), self.agent.updates(), self.seconds)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint, RlError> {
        let mut c = Checkpoint::new("offpolicy");
        self.agent.save_into(&mut c.archive);
        c.set("updates", &self.agent.updates())?;
        c.set("env_step", &self.agent.env_step())?;
        c.set("collector", &self.collector.state())?;
        c.set("tracker", &self.tracker.state())?;
        c.set("config", self.agent.config())?;
        c.push_replay(&self.replay)?;
        Ok(c)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), RlError> {
        self.checkpoint()?.save(path)
    }

    /// Rebuilds a trainer from a checkpoint; continuing it reproduces the
    /// uninterrupted run exactly.
    pub fn resume(
        checkpoint: &Checkpoint,
        budget: TrainBudget,
        bounds: ReturnBounds,
        make_env: &dyn Fn() -> E,
    ) -> Result<Self, RlError> {
        checkpoint.expect_kind("offpolicy")?;
        let config: OffPolicyConfig = checkpoint.get("config")?;
        let mut t = Self::new(config, budget, bounds, make_env)?;
        t.agent.load_from(&checkpoint.archive, checkpoint.get("updates")?, checkpoint.get("env_step")?)?;
        t.collector.restore(&checkpoint.get::<CollectorState>("collector")?)?;
        t.tracker.restore(checkpoint.get("tracker")?);
        let frame = t.collector.spec().frame;
        checkpoint.restore_replay(&mut t.replay, frame)?;
        Ok(t)
    }
}

/// Alternates rollout collection and clipped-surrogate updates.
pub struct OnPolicyTrainer<E: Environment> {
    agent: OnPolicyAgent,
    collector: Collector<E>,
    tracker: Tracker<E>,
    last: Option<OnPolicyLosses>,
    seconds: f64,
}

impl<E: Environment> OnPolicyTrainer<E> {
    pub fn new(
        config: OnPolicyConfig,
        budget: TrainBudget,
        bounds: ReturnBounds,
        make_env: &dyn Fn() -> E,
    ) -> Result<Self, RlError> {
        config.validate()?;
        let envs: Vec<E> = (0..config.num_envs).map(|_| make_env()).collect();
        let collector = Collector::new(envs, RngPolicy::new(config.seed).derive_seed("rl/collect", 0), config.frame_stack)?;
        let spec = collector.spec();
        let tracker = Tracker::new(budget, bounds, config.seed, make_env)?;
        let agent = OnPolicyAgent::new(config, spec.frame, spec.action_dim, spec.proprio_dim)?;
        Ok(Self { agent, collector, tracker, last: None, seconds: 0.0 })
    }

    pub fn agent(&self) -> &OnPolicyAgent {
        &self.agent
    }

    pub fn env_steps(&self) -> u64 {
        self.collector.env_steps()
    }

    pub fn last_losses(&self) -> Option<OnPolicyLosses> {
        self.last
    }

    /// Runs whole iterations until `limit` environment steps (capped by
    /// the budget) or the target score.
    pub fn run_until(&mut self, limit: u64) -> Result<RlResult, RlError> {
        let start = Instant::now();
        while !self.tracker.finished(self.collector.env_steps(), limit) {
            let len = self.agent.config().rollout_len;
            let rollout = self.collector.collect(&mut self.agent as &mut dyn RolloutAgent, len)?;
            if rollout.steps > 0 {
                let batch = self.agent.build_batch(&rollout)?;
                self.last = Some(self.agent.update(&batch)?);
            }
            self.tracker.maybe_eval(&self.agent, self.collector.env_steps())?;
        }
        self.seconds += start.elapsed().as_secs_f64();
        Ok(self.result())
    }

    pub fn run(&mut self) -> Result<RlResult, RlError> {
        self.run_until(u64::MAX)
    }

    pub fn result(&self) -> RlResult {
        self.tracker.result(self.collector.env_steps(), self.agent.updates(), self.seconds)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint, RlError> {
        let mut c = Checkpoint::new("onpolicy");
        self.agent.save_into(&mut c.archive);
        c.set("updates", &self.agent.updates())?;
        c.set("collector", &self.collector.state())?;
        c.set("tracker", &self.tracker.state())?;
        c.set("config", self.agent.config())?;
        Ok(c)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), RlError> {
        self.checkpoint()?.save(path)
    }

    pub fn resume(
        checkpoint: &Checkpoint,
        budget: TrainBudget,
        bounds: ReturnBounds,
        make_env: &dyn Fn() -> E,
    ) -> Result<Self, RlError> {
        checkpoint.expect_kind("onpolicy")?;
        let config: OnPolicyConfig = checkpoint.get("config")?;
        let mut t = Self::new(config, budget, bounds, make_env)?;
        t.agent.load_from(&checkpoint.archive, checkpoint.get("updates")?)?;
        t.collector.restore(&checkpoint.get::<CollectorState>("collector")?)?;
        t.tracker.restore(checkpoint.get("tracker")?);
        Ok(t)
    }
}

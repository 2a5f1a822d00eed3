use serde::{Deserialize, Serialize};
use vmc_core::{Frame, ObservationBatch, RngPolicy};
use vmc_envdata::{EnvError, EnvPool, EnvSpec, Environment};

use crate::RlError;

/// Address of one decision: the episode's global index and the step within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActKey {
    pub episode: u64,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub action: Vec<f32>,
    pub log_prob: f32,
    pub value: f32,
}

impl ActOutput {
    pub fn action(action: Vec<f32>) -> Self {
        Self { action, log_prob: 0.0, value: 0.0 }
    }
}

/// A policy that can drive a [`Collector`].
pub trait RolloutAgent {
    fn frame_stack(&self) -> usize;

    /// One output per sample. Agents must derive any randomness from
    /// `keys` so collection is reproducible.
    fn act(&mut self, obs: &ObservationBatch, proprio: &[Vec<f32>], keys: &[ActKey]) -> Result<Vec<ActOutput>, RlError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentEnd {
    /// The task ended the episode; nothing to bootstrap.
    Terminal,
    /// The horizon ended the episode.
    Truncated,
    /// Collection stopped mid-episode; the episode continues next call.
    Cut,
}

/// Consecutive transitions of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub episode: u64,
    /// Step index of the first transition within the episode.
    pub start: usize,
    /// The `depth - 1` frames preceding `frames[0]` (the first frame
    /// repeated at the episode start).
    pub history: Vec<Frame>,
    /// Observations `start ..= start + len`.
    pub frames: Vec<Frame>,
    pub proprio: Vec<Vec<f32>>,
    pub actions: Vec<Vec<f32>>,
    pub rewards: Vec<f32>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    pub end: SegmentEnd,
}

impl Segment {
    fn open(episode: u64, start: usize, stack: &[Frame], proprio: Vec<f32>) -> Self {
        let (last, history) = stack.split_last().expect("stack depth is at least 1");
        Self {
            episode,
            start,
            history: history.to_vec(),
            frames: vec![last.clone()],
            proprio: vec![proprio],
            actions: Vec::new(),
            rewards: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            end: SegmentEnd::Cut,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.history.len() + 1
    }

    /// The frame stack observed before transition `i` (`i == len` gives the
    /// stack after the last transition).
    pub fn stack(&self, i: usize) -> Vec<&Frame> {
        self.history.iter().chain(&self.frames).skip(i).take(self.depth()).collect()
    }
}

/// Output of one collection call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    pub segments: Vec<Segment>,
    /// Episodes abandoned after an environment fault; earlier segments of
    /// them must be dropped by the consumer.
    pub discarded: Vec<u64>,
    pub steps: usize,
}

#[derive(Debug, Clone)]
struct Slot {
    episode: u64,
    t: usize,
    stack: Vec<Frame>,
    proprio: Vec<f32>,
    /// Every action taken so far, for rebuilding the state on resume.
    taken: Vec<Vec<f32>>,
    seg: Segment,
}

/// In-flight episode of one environment, as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotState {
    pub episode: u64,
    pub actions: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectorState {
    pub next_episode: u64,
    pub env_steps: u64,
    pub slots: Vec<Option<SlotState>>,
}

const RESET_RETRIES: usize = 8;

/// Drives a pool of environments in lockstep. Episode `k` (counted globally
/// in the order episodes are started) is reset with
/// `derive_seed("rl/episode", k)`.
pub struct Collector<E: Environment> {
    pool: EnvPool<E>,
    seeds: RngPolicy,
    depth: usize,
    slots: Vec<Option<Slot>>,
    next_episode: u64,
    env_steps: u64,
}

impl<E: Environment> Collector<E> {
    pub fn new(envs: Vec<E>, seed: u64, depth: usize) -> Result<Self, RlError> {
        if depth == 0 {
            return Err(RlError::Config("frame stack must be at least 1".into()));
        }
        let pool = EnvPool::new(envs)?;
        let slots = vec![None; pool.len()];
        Ok(Self { pool, seeds: RngPolicy::new(seed), depth, slots, next_episode: 0, env_steps: 0 })
    }

    pub fn spec(&self) -> EnvSpec {
        self.pool.spec()
    }

    pub fn num_envs(&self) -> usize {
        self.pool.len()
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes_started(&self) -> u64 {
        self.next_episode
    }

    pub fn episode_seed(&self, episode: u64) -> u64 {
        self.seeds.derive_seed("rl/episode", episode)
    }

    fn observe(env: &E) -> Vec<f32> {
        env.proprio().unwrap_or_default()
    }

    fn start_slot(&mut self, i: usize) -> Result<(), RlError> {
        for _ in 0..RESET_RETRIES {
            let episode = self.next_episode;
            self.next_episode += 1;
            let env = &mut self.pool.envs_mut()[i];
            match env.reset(self.seeds.derive_seed("rl/episode", episode)) {
                Ok(f) => {
                    let stack = vec![f; self.depth];
                    let proprio = Self::observe(env);
                    let seg = Segment::open(episode, 0, &stack, proprio.clone());
                    self.slots[i] = Some(Slot { episode, t: 0, stack, proprio, taken: Vec::new(), seg });
                    return Ok(());
                }
                Err(e @ EnvError::Fault(_)) => log::error!("env {i}: reset of episode {episode} failed: {e}"),
                Err(e) => return Err(e.into()),
            }
        }
        Err(RlError::Env(EnvError::Fault(format!("env {i}: {RESET_RETRIES} consecutive reset faults"))))
    }

    /// Runs `steps_per_env` lockstep steps on every environment.
    pub fn collect(&mut self, agent: &mut dyn RolloutAgent, steps_per_env: usize) -> Result<Rollout, RlError> {
        if agent.frame_stack() != self.depth {
            return Err(RlError::Config(format!(
                "agent stacks {} frames, collector {}",
                agent.frame_stack(),
                self.depth
            )));
        }
        let spec = self.pool.spec();
        let mut out = Rollout::default();
        for _ in 0..steps_per_env {
            for i in 0..self.slots.len() {
                if self.slots[i].is_none() {
                    self.start_slot(i)?;
                }
            }
            let slots: Vec<&Slot> = self.slots.iter().map(|s| s.as_ref().expect("slot started")).collect();
            let stacks: Vec<Vec<&Frame>> = slots.iter().map(|s| s.stack.iter().collect()).collect();
            let obs = ObservationBatch::from_frames(&stacks)?;
            let proprio: Vec<Vec<f32>> = slots.iter().map(|s| s.proprio.clone()).collect();
            let keys: Vec<ActKey> = slots.iter().map(|s| ActKey { episode: s.episode, step: s.t }).collect();
            let outputs = agent.act(&obs, &proprio, &keys)?;
            if outputs.len() != slots.len() {
                return Err(RlError::Shape(format!("{} actions for {} environments", outputs.len(), slots.len())));
            }
            let clamped: Vec<Option<Vec<f32>>> = outputs
                .iter()
                .map(|o| Some(o.action.iter().map(|a| a.clamp(spec.action_low, spec.action_high)).collect()))
                .collect();
            let results = self.pool.step(&clamped);
            for (i, (res, o)) in results.into_iter().zip(outputs).enumerate() {
                let res = res.expect("every environment was stepped");
                let slot = self.slots[i].as_mut().expect("slot started");
                match res {
                    Ok(r) => {
                        slot.taken.push(clamped[i].clone().expect("action present"));
                        slot.t += 1;
                        slot.stack.remove(0);
                        slot.stack.push(r.observation.clone());
                        slot.proprio = Self::observe(&self.pool.envs()[i]);
                        let seg = &mut slot.seg;
                        seg.actions.push(o.action);
                        seg.log_probs.push(o.log_prob);
                        seg.values.push(o.value);
                        seg.rewards.push(r.reward);
                        seg.frames.push(r.observation);
                        seg.proprio.push(slot.proprio.clone());
                        out.steps += 1;
                        self.env_steps += 1;
                        if r.done {
                            let mut seg = self.slots[i].take().expect("slot started").seg;
                            seg.end = if r.success { SegmentEnd::Terminal } else { SegmentEnd::Truncated };
                            out.segments.push(seg);
                        }
                    }
                    Err(e) => {
                        log::error!("env {i}: episode {} discarded after fault: {e}", slot.episode);
                        out.discarded.push(slot.episode);
                        self.slots[i] = None;
                    }
                }
            }
        }
        for slot in self.slots.iter_mut().flatten() {
            if !slot.seg.is_empty() {
                let next = Segment::open(slot.episode, slot.t, &slot.stack, slot.proprio.clone());
                out.segments.push(std::mem::replace(&mut slot.seg, next));
            }
        }
        Ok(out)
    }

    pub fn state(&self) -> CollectorState {
        CollectorState {
            next_episode: self.next_episode,
            env_steps: self.env_steps,
            slots: self
                .slots
                .iter()
                .map(|s| s.as_ref().map(|s| SlotState { episode: s.episode, actions: s.taken.clone() }))
                .collect(),
        }
    }

    /// Rebuilds in-flight episodes by replaying their actions from the
    /// episode seed; environments are deterministic, so this reproduces the
    /// exact state.
    pub fn restore(&mut self, state: &CollectorState) -> Result<(), RlError> {
        if state.slots.len() != self.slots.len() {
            return Err(RlError::Checkpoint(format!(
                "checkpoint has {} environments, collector {}",
                state.slots.len(),
                self.slots.len()
            )));
        }
        self.next_episode = state.next_episode;
        self.env_steps = state.env_steps;
        for (i, s) in state.slots.iter().enumerate() {
            self.slots[i] = match s {
                None => None,
                Some(s) => {
                    let env = &mut self.pool.envs_mut()[i];
                    let mut stack = vec![env.reset(self.seeds.derive_seed("rl/episode", s.episode))?; self.depth];
                    for a in &s.actions {
                        let r = env.step(a)?;
                        stack.remove(0);
                        stack.push(r.observation);
                    }
                    let proprio = Self::observe(env);
                    let t = s.actions.len();
                    let seg = Segment::open(s.episode, t, &stack, proprio.clone());
                    Some(Slot { episode: s.episode, t, stack, proprio, taken: s.actions.clone(), seg })
                }
            };
        }
        Ok(())
    }
}

/// Collects `steps` transitions per environment.
pub fn collect_rollout<E: Environment>(
    agent: &mut dyn RolloutAgent,
    collector: &mut Collector<E>,
    steps: usize,
) -> Result<Rollout, RlError> {
    collector.collect(agent, steps)
}

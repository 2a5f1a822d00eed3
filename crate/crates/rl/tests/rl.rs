use std::collections::HashMap;

use proptest::prelude::*;
use rand::Rng;
use vmc_core::{Frame, FrameShape, ObservationBatch, RngPolicy};
use vmc_encoders::{ConvNetSpec, EncoderVariant, MOCK_PRETRAINED};
use vmc_envdata::{EnvError, EnvSpec, Environment, ReachConfig, ScriptedExpert, StepResult, SyntheticReachEnv};
use vmc_rl::*;

fn reach(res: usize, horizon: usize) -> SyntheticReachEnv {
    SyntheticReachEnv::new(ReachConfig { horizon, ..ReachConfig::preset(res) })
}

fn tiny_off(seed: u64) -> OffPolicyConfig {
    OffPolicyConfig {
        encoder: RlEncoder::Scratch { spec: ConvNetSpec::miniature(EncoderVariant::Offpolicy) },
        batch_size: 16,
        shift_pad: 1,
        feature_dim: 8,
        hidden_dim: 16,
        seed_steps: 40,
        replay_capacity: 10_000,
        noise: NoiseSchedule { initial: 1.0, end: 0.1, duration: 500 },
        seed,
        ..OffPolicyConfig::default()
    }
}

fn tiny_on(seed: u64) -> OnPolicyConfig {
    OnPolicyConfig {
        encoder: RlEncoder::Scratch { spec: ConvNetSpec::miniature(EncoderVariant::Onpolicy) },
        shift_pad: 1,
        hidden: vec![16],
        rollout_len: 8,
        num_envs: 2,
        epochs: 2,
        minibatches: 2,
        seed,
        ..OnPolicyConfig::default()
    }
}

fn frame8() -> FrameShape {
    FrameShape::new(3, 8, 8)
}

/// Fills a replay buffer from random-policy episodes of the 8x8 task.
fn filled_replay(n_step: usize, gamma: f64, episodes: usize) -> ReplayBuffer {
    let mut agent = OffPolicyAgent::new(tiny_off(0), frame8(), 2).unwrap();
    let mut c = Collector::new(vec![reach(8, 10)], 3, 3).unwrap();
    let mut b = ReplayBuffer::new(100_000, n_step, gamma, 3).unwrap();
    let r = c.collect(&mut agent, episodes * 10).unwrap();
    for s in &r.segments {
        b.add_segment(s);
    }
    b
}

fn gae_oracle(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let t = rewards.len();
    let delta: Vec<f64> = (0..t).map(|i| rewards[i] + gamma * values[i + 1] - values[i]).collect();
    (0..t).map(|i| (i..t).map(|k| (gamma * lambda).powi((k - i) as i32) * delta[k]).sum()).collect()
}

#[test]
fn gae_matches_double_sum_oracle() {
    let mut r = RngPolicy::new(5).rng("test/gae", 0);
    for _ in 0..100 {
        let rewards: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..11).map(|_| r.random_range(-2.0..2.0)).collect();
        let (gamma, lambda) = (r.random_range(0.0..=1.0), r.random_range(0.0..=1.0));
        let (adv, ret) = compute_gae(&rewards, &values, gamma, lambda).unwrap();
        for (i, (a, o)) in adv.iter().zip(gae_oracle(&rewards, &values, gamma, lambda)).enumerate() {
            assert!((a - o).abs() < 1e-10, "step {i}: {a} vs {o}");
            assert!((ret[i] - (a + values[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn gae_three_step_hand_unrolled() {
    let (g, l) = (0.9, 0.8);
    let r = [1.0, -0.5, 2.0];
    let v = [0.3, 0.1, -0.2, 0.4];
    let d0 = 1.0 + 0.9 * 0.1 - 0.3;
    let d1 = -0.5 + 0.9 * -0.2 - 0.1;
    let d2 = 2.0 + 0.9 * 0.4 - -0.2;
    let expect = [d0 + g * l * d1 + (g * l) * (g * l) * d2, d1 + g * l * d2, d2];
    let (adv, _) = compute_gae(&r, &v, g, l).unwrap();
    for (a, e) in adv.iter().zip(expect) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn gae_limits() {
    let r = [1.0, 2.0, -1.0, 0.5];
    let (adv, _) = compute_gae(&r, &[0.0; 5], 1.0, 1.0).unwrap();
    assert_eq!(adv, vec![2.5, 1.5, -0.5, 0.5]);
    let v = [0.2, -0.1, 0.7, 0.0, 1.0];
    let (adv, _) = compute_gae(&r, &v, 0.9, 0.0).unwrap();
    for i in 0..4 {
        assert_eq!(adv[i], r[i] + 0.9 * v[i + 1] - v[i]);
    }
}

#[test]
fn gae_rejects_length_mismatch() {
    assert!(matches!(compute_gae(&[1.0], &[1.0], 0.9, 0.9), Err(RlError::Shape(_))));
}

#[test]
fn zero_discount_targets_are_rewards() {
    let b = filled_replay(3, 0.0, 6);
    let agent = OffPolicyAgent::new(tiny_off(1), frame8(), 2).unwrap();
    let s = b.sample(32, &RngPolicy::new(2), 0).unwrap();
    let y = agent.td_targets(&s.next_obs, &s, 0).unwrap();
    for i in 0..32 {
        assert_eq!(s.discounts[i], 0.0);
        assert_eq!(y[i], s.rewards[i]);
    }
}

#[test]
fn one_step_targets_are_standard_td() {
    let b = filled_replay(1, 0.9, 4);
    let s = b.sample(32, &RngPolicy::new(3), 0).unwrap();
    assert!(s.window.iter().all(|&m| m == 1));
    for &d in &s.discounts {
        assert!(d == 0.0 || (d - 0.9).abs() < 1e-7);
    }
    assert_eq!(td_target(0.5, 0.9, 2.0, -1.0), 0.5 + 0.9 * -1.0);
}

#[test]
fn full_soft_update_copies_online_critic() {
    let b = filled_replay(3, 0.99, 6);
    let mut agent = OffPolicyAgent::new(OffPolicyConfig { tau: 1.0, ..tiny_off(2) }, frame8(), 2).unwrap();
    agent.update(&b).unwrap();
    assert_eq!(agent.critic_target().snapshot(), agent.critic_store().snapshot());
}

#[test]
fn soft_update_contracts_by_one_minus_tau() {
    let b = filled_replay(3, 0.99, 6);
    let mut agent = OffPolicyAgent::new(OffPolicyConfig { tau: 0.1, ..tiny_off(3) }, frame8(), 2).unwrap();
    for _ in 0..3 {
        agent.update(&b).unwrap();
    }
    let mut d = agent.target_distance();
    assert!(d > 0.0);
    for _ in 0..5 {
        agent.soft_update_targets();
        let nd = agent.target_distance();
        assert!((nd / d - 0.9).abs() < 1e-3, "{nd} / {d}");
        d = nd;
    }
}

#[test]
fn swapping_twin_critics_keeps_targets() {
    let b = filled_replay(3, 0.99, 6);
    let mut agent = OffPolicyAgent::new(tiny_off(4), frame8(), 2).unwrap();
    agent.update(&b).unwrap();
    let s = b.sample(16, &RngPolicy::new(9), 1).unwrap();
    let before = agent.td_targets(&s.next_obs, &s, 5).unwrap();
    agent.swap_target_critics();
    let after = agent.td_targets(&s.next_obs, &s, 5).unwrap();
    assert_eq!(before, after);
}

#[test]
fn update_needs_a_full_batch() {
    let b = filled_replay(3, 0.99, 1);
    let mut agent = OffPolicyAgent::new(OffPolicyConfig { batch_size: 500, ..tiny_off(0) }, frame8(), 2).unwrap();
    assert!(matches!(agent.update(&b), Err(RlError::InsufficientData { .. })));
}

#[test]
fn offpolicy_config_invariants() {
    assert!(OffPolicyConfig { gamma: 1.2, ..OffPolicyConfig::default() }.validate().is_err());
    assert!(OffPolicyConfig { tau: 0.0, ..OffPolicyConfig::default() }.validate().is_err());
    assert!(OffPolicyConfig { tau: 1.0, ..OffPolicyConfig::default() }.validate().is_ok());
    assert!(OffPolicyConfig::default().validate().is_ok());
}

#[test]
fn frozen_backbone_stays_fixed_during_offpolicy_updates() {
    let mut cfg = tiny_off(5);
    cfg.encoder = RlEncoder::Pretrained { name: MOCK_PRETRAINED.into(), weights: None, native: 32 };
    cfg.shift_pad = 0;
    let b = filled_replay(3, 0.99, 6);
    let mut agent = OffPolicyAgent::new(cfg, frame8(), 2).unwrap();
    let before = agent.backend().store().snapshot();
    let actor = agent.actor_store().snapshot();
    for _ in 0..3 {
        agent.update(&b).unwrap();
    }
    assert_eq!(agent.backend().store().snapshot(), before);
    assert_ne!(agent.actor_store().snapshot(), actor);
}

/// Two-channel 1x1 frames carrying `(episode, step)`.
fn tagged_segment(episode: u64, start: usize, len: usize, end: SegmentEnd, depth: usize) -> Segment {
    let shape = FrameShape::new(2, 1, 1);
    let f = |t: usize| Frame::new(shape, vec![episode as u8, t as u8]).unwrap();
    let first = f(start);
    let history = if start == 0 {
        vec![first; depth - 1]
    } else {
        (0..depth - 1).map(|k| f((start + k + 1).saturating_sub(depth))).collect()
    };
    Segment {
        episode,
        start,
        history,
        frames: (start..=start + len).map(f).collect(),
        proprio: vec![vec![]; len + 1],
        actions: (start..start + len).map(|t| vec![t as f32]).collect(),
        rewards: (start..start + len).map(|t| reward_of(episode, t)).collect(),
        log_probs: vec![0.0; len],
        values: vec![0.0; len],
        end,
    }
}

fn reward_of(episode: u64, t: usize) -> f32 {
    ((episode * 31 + t as u64 * 7) % 13) as f32 / 13.0 - 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_windows_stay_inside_episodes(
        lens in prop::collection::vec((1usize..12, 0u8..3, 1usize..5), 1..8),
        n in 1usize..6,
        depth in 1usize..4,
        seed in 0u64..1000,
    ) {
        let gamma = 0.9;
        let mut b = ReplayBuffer::new(10_000, n, gamma, depth).unwrap();
        let mut meta = HashMap::new();
        for (id, &(len, end, pieces)) in lens.iter().enumerate() {
            let id = id as u64;
            let end = [SegmentEnd::Terminal, SegmentEnd::Truncated, SegmentEnd::Cut][end as usize];
            let step = len.div_ceil(pieces);
            let mut start = 0;
            while start < len {
                let l = step.min(len - start);
                let e = if start + l == len { end } else { SegmentEnd::Cut };
                b.add_segment(&tagged_segment(id, start, l, e, depth));
                start += l;
            }
            meta.insert(id, (len, end));
        }
        prop_assume!(b.sampleable() > 0);
        let batch = b.sampleable().min(64);
        let s = b.sample(batch, &RngPolicy::new(seed), 0).unwrap();
        let data = s.obs.data();
        let next = s.next_obs.data();
        for i in 0..batch {
            let (ep, t) = s.index[i];
            let (len, end) = meta[&ep];
            let m = s.window[i];
            prop_assert!(m >= 1 && m <= n && t + m <= len);
            if end == SegmentEnd::Cut {
                prop_assert_eq!(m, n);
            }
            let oracle: f64 = (0..m).map(|k| gamma.powi(k as i32) * reward_of(ep, t + k) as f64).sum();
            prop_assert!((s.rewards[i] as f64 - oracle).abs() < 1e-5);
            let terminal_hit = end == SegmentEnd::Terminal && t + m == len;
            let disc = if terminal_hit { 0.0 } else { gamma.powi(m as i32) };
            prop_assert!((s.discounts[i] as f64 - disc).abs() < 1e-6);
            for k in 0..depth {
                let o = &data[(i * depth + k) * 2..(i * depth + k) * 2 + 2];
                let nx = &next[(i * depth + k) * 2..(i * depth + k) * 2 + 2];
                prop_assert_eq!(o[0] as u64, ep);
                prop_assert_eq!(nx[0] as u64, ep);
                prop_assert_eq!(o[1] as usize, (t + k + 1).saturating_sub(depth));
                prop_assert_eq!(nx[1] as usize, (t + m + k + 1).saturating_sub(depth));
            }
        }
    }
}

#[test]
fn discarded_episodes_leave_the_buffer() {
    let mut b = ReplayBuffer::new(100, 1, 0.9, 1).unwrap();
    b.add_segment(&tagged_segment(0, 0, 4, SegmentEnd::Truncated, 1));
    b.add_segment(&tagged_segment(1, 0, 3, SegmentEnd::Cut, 1));
    b.discard(1);
    assert_eq!((b.len(), b.num_episodes()), (4, 1));
}

#[test]
fn clip_inactive_surrogate_equals_unclipped() {
    let ratios = [0.85, 0.95, 1.0, 1.1, 1.19];
    let adv = [1.0, -2.0, 0.5, 3.0, -1.0];
    let unclipped: f64 = ratios.iter().zip(&adv).map(|(r, a)| r * a).sum::<f64>() / 5.0;
    assert_eq!(clipped_surrogate(&ratios, &adv, 0.2), unclipped);
}

/// Deterministic agent whose actions encode the decision key.
struct KeyAgent {
    depth: usize,
}

impl RolloutAgent for KeyAgent {
    fn frame_stack(&self) -> usize {
        self.depth
    }

    fn act(&mut self, obs: &ObservationBatch, _p: &[Vec<f32>], keys: &[ActKey]) -> Result<Vec<ActOutput>, RlError> {
        assert_eq!(obs.len(), keys.len());
        Ok(keys
            .iter()
            .map(|k| ActOutput::action(vec![(k.episode % 7) as f32 * 1e-4, k.step as f32 * 1e-4]))
            .collect())
    }
}

type TransitionKey = (u64, usize, Vec<u32>, u32, Vec<u8>);

fn transitions(r: &Rollout) -> Vec<TransitionKey> {
    let mut out = Vec::new();
    for s in &r.segments {
        for i in 0..s.len() {
            let obs: Vec<u8> = s.stack(i).iter().flat_map(|f| f.pixels().to_vec()).collect();
            out.push((s.episode, s.start + i, s.actions[i].iter().map(|a| a.to_bits()).collect(), s.rewards[i].to_bits(), obs));
        }
    }
    out.sort();
    out
}

#[test]
fn empty_collection() {
    let mut c = Collector::new(vec![reach(8, 5)], 0, 2).unwrap();
    let r = collect_rollout(&mut KeyAgent { depth: 2 }, &mut c, 0).unwrap();
    assert!(r.segments.is_empty() && r.steps == 0);
}

#[test]
fn collection_is_deterministic() {
    let run = || {
        let mut c = Collector::new(vec![reach(8, 5), reach(8, 5)], 11, 1).unwrap();
        let mut agent = OnPolicyAgent::new(tiny_on(0), frame8(), 2, 2).unwrap();
        let r = c.collect(&mut agent, 12).unwrap();
        (transitions(&r), r.segments.iter().map(|s| s.log_probs.clone()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn parallel_collection_matches_sequential() {
    let mut two = Collector::new(vec![reach(8, 5), reach(8, 5)], 4, 2).unwrap();
    let a = two.collect(&mut KeyAgent { depth: 2 }, 10).unwrap();
    let mut one = Collector::new(vec![reach(8, 5)], 4, 2).unwrap();
    let b = one.collect(&mut KeyAgent { depth: 2 }, 20).unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(transitions(&a), transitions(&b));
}

/// Fails on step `at` of the episode reset with `bad_seed`.
struct Faulty {
    inner: SyntheticReachEnv,
    bad_seed: u64,
    at: usize,
    current: u64,
    t: usize,
}

impl Environment for Faulty {
    fn spec(&self) -> EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> Result<Frame, EnvError> {
        self.current = seed;
        self.t = 0;
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &[f32]) -> Result<StepResult, EnvError> {
        self.t += 1;
        if self.current == self.bad_seed && self.t == self.at {
            return Err(EnvError::Fault("simulated".into()));
        }
        self.inner.step(action)
    }

    fn proprio(&self) -> Option<Vec<f32>> {
        self.inner.proprio()
    }
}

#[test]
fn faulty_episode_is_discarded_and_collection_continues() {
    let probe = Collector::new(vec![reach(8, 5)], 8, 1).unwrap();
    let bad_seed = probe.episode_seed(1);
    let env = Faulty { inner: reach(8, 5), bad_seed, at: 3, current: 0, t: 0 };
    let mut c = Collector::new(vec![env], 8, 1).unwrap();
    let r = c.collect(&mut KeyAgent { depth: 1 }, 14).unwrap();
    assert_eq!(r.discarded, vec![1]);
    assert!(r.segments.iter().all(|s| s.episode != 1));
    let eps: Vec<u64> = r.segments.iter().map(|s| s.episode).collect();
    assert_eq!(eps, vec![0, 2, 3]);
    assert_eq!(r.steps, 5 + 2 + 5 + 1);
}

#[test]
fn faulty_episode_leaves_the_replay_buffer() {
    let probe = Collector::new(vec![reach(8, 5)], 8, 1).unwrap();
    let bad_seed = probe.episode_seed(0);
    let env = Faulty { inner: reach(8, 5), bad_seed, at: 4, current: 0, t: 0 };
    let mut c = Collector::new(vec![env], 8, 1).unwrap();
    let mut b = ReplayBuffer::new(100, 1, 0.9, 1).unwrap();
    for _ in 0..8 {
        let r = c.collect(&mut KeyAgent { depth: 1 }, 1).unwrap();
        for id in &r.discarded {
            b.discard(*id);
        }
        for s in &r.segments {
            b.add_segment(s);
        }
    }
    let s = b.sample(b.sampleable(), &RngPolicy::new(0), 0).unwrap();
    assert!(s.index.iter().all(|&(e, _)| e == 1));
}

fn rollout_batch(agent: &OnPolicyAgent, seed: u64) -> RolloutBatch {
    let mut c = Collector::new(vec![reach(8, 6), reach(8, 6)], seed, 1).unwrap();
    let mut a = OnPolicyAgent::new(tiny_on(0), frame8(), 2, 2).unwrap();
    let r = c.collect(&mut a, 8).unwrap();
    agent.build_batch(&r).unwrap()
}

#[test]
fn zero_advantages_leave_the_policy_unchanged() {
    let cfg = OnPolicyConfig { normalize_advantages: false, value_coef: 0.0, ..tiny_on(1) };
    let mut agent = OnPolicyAgent::new(cfg, frame8(), 2, 2).unwrap();
    let mut batch = rollout_batch(&agent, 2);
    batch.advantages.iter_mut().for_each(|a| *a = 0.0);
    let before = (agent.store().snapshot(), agent.backend().store().snapshot());
    agent.update(&batch).unwrap();
    assert_eq!((agent.store().snapshot(), agent.backend().store().snapshot()), before);
}

#[test]
fn nan_advantage_is_an_error_and_changes_nothing() {
    let mut agent = OnPolicyAgent::new(tiny_on(1), frame8(), 2, 2).unwrap();
    let mut batch = rollout_batch(&agent, 2);
    batch.advantages[3] = f32::NAN;
    let before = (agent.store().snapshot(), agent.backend().store().snapshot(), agent.updates());
    assert!(matches!(agent.update(&batch), Err(RlError::Numerical(_))));
    assert_eq!((agent.store().snapshot(), agent.backend().store().snapshot(), agent.updates()), before);
}

#[test]
fn value_targets_ignore_augmentation() {
    let a = OnPolicyAgent::new(tiny_on(3), frame8(), 2, 2).unwrap();
    let b = OnPolicyAgent::new(tiny_on(3), frame8(), 2, 2).unwrap().with_augment_seed(99);
    let (ba, bb) = (rollout_batch(&a, 4), rollout_batch(&b, 4));
    assert_eq!(ba, bb);
    let (mut a, mut b) = (a, b);
    let la = a.update(&ba).unwrap();
    let lb = b.update(&bb).unwrap();
    assert_ne!(la, lb);
    assert_eq!(ba, rollout_batch(&OnPolicyAgent::new(tiny_on(3), frame8(), 2, 2).unwrap(), 4));
}

#[test]
fn gae_bootstraps_only_non_terminal_segments() {
    let agent = OnPolicyAgent::new(tiny_on(0), frame8(), 2, 2).unwrap();
    let mut c = Collector::new(vec![reach(8, 3)], 0, 1).unwrap();
    let r = c.collect(&mut KeyAgent { depth: 1 }, 4).unwrap();
    assert_eq!(r.segments.iter().map(|s| s.end).collect::<Vec<_>>(), vec![SegmentEnd::Truncated, SegmentEnd::Cut]);
    let b = agent.build_batch(&r).unwrap();
    assert_eq!(b.len(), 4);
    let v = agent.values(&ObservationBatch::from_frames(&[r.segments[0].stack(3)]).unwrap(), &[r.segments[0].proprio[3].clone()]).unwrap();
    let rewards: Vec<f64> = r.segments[0].rewards.iter().map(|&x| x as f64).collect();
    let mut values: Vec<f64> = r.segments[0].values.iter().map(|&x| x as f64).collect();
    values.push(v[0] as f64);
    let (adv, _) = compute_gae(&rewards, &values, 0.99, 0.95).unwrap();
    for i in 0..3 {
        assert!((b.advantages[i] as f64 - adv[i]).abs() < 1e-5);
    }
}

fn bounds() -> ReturnBounds {
    ReturnBounds { lo: -10.0, hi: -1.0 }
}

#[test]
fn reference_bounds_order_random_below_expert() {
    let mut envs: Vec<_> = (0..3).map(|_| reach(16, 50)).collect();
    let b = reference_bounds(&mut envs, &mut ScriptedExpert { max_speed: 0.1 }, &[1, 2, 3, 4, 5]).unwrap();
    assert!(b.hi > b.lo);
    assert_eq!(b.normalize(b.hi).unwrap(), 1.0);
    assert_eq!(b.normalize(b.lo).unwrap(), 0.0);
}

#[test]
fn offpolicy_runs_are_reproducible_and_resume_exactly() {
    let budget = TrainBudget { total_steps: 120, eval_every: 40, eval_episodes: 2, target: None };
    let make = || reach(8, 10);
    let mut full = OffPolicyTrainer::new(tiny_off(6), budget, bounds(), &make).unwrap();
    let rf = full.run().unwrap();
    assert_eq!(rf.series.len(), 3);
    assert_eq!(rf.updates, 120 - 40);
    let mut again = OffPolicyTrainer::new(tiny_off(6), budget, bounds(), &make).unwrap();
    assert!(again.run().unwrap().same_metrics(&rf));

    let mut first = OffPolicyTrainer::new(tiny_off(6), budget, bounds(), &make).unwrap();
    first.run_until(75).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("off.ckpt");
    first.save_checkpoint(&path).unwrap();
    let mut resumed = OffPolicyTrainer::resume(&Checkpoint::load(&path).unwrap(), budget, bounds(), &make).unwrap();
    let rr = resumed.run().unwrap();
    assert!(rr.same_metrics(&rf), "{rr:?}\n{rf:?}");
    assert_eq!(resumed.agent().actor_store().snapshot(), full.agent().actor_store().snapshot());
    assert_eq!(resumed.agent().critic_target().snapshot(), full.agent().critic_target().snapshot());
}

#[test]
fn onpolicy_runs_are_reproducible_and_resume_exactly() {
    let budget = TrainBudget { total_steps: 64, eval_every: 16, eval_episodes: 2, target: None };
    let make = || reach(8, 10);
    let mut full = OnPolicyTrainer::new(tiny_on(7), budget, bounds(), &make).unwrap();
    let rf = full.run().unwrap();
    assert_eq!((rf.series.len(), rf.updates), (4, 4));
    let mut first = OnPolicyTrainer::new(tiny_on(7), budget, bounds(), &make).unwrap();
    first.run_until(32).unwrap();
    let ckpt = first.checkpoint().unwrap();
    let mut resumed = OnPolicyTrainer::resume(&ckpt, budget, bounds(), &make).unwrap();
    let rr = resumed.run().unwrap();
    assert!(rr.same_metrics(&rf));
    assert_eq!(resumed.agent().store().snapshot(), full.agent().store().snapshot());
    assert!(matches!(
        OffPolicyTrainer::resume(&ckpt, budget, bounds(), &make),
        Err(RlError::Checkpoint(_))
    ));
}

#[test]
fn stack_mismatch_is_rejected() {
    let mut c = Collector::new(vec![reach(8, 5)], 0, 3).unwrap();
    assert!(matches!(c.collect(&mut KeyAgent { depth: 1 }, 1), Err(RlError::Config(_))));
}

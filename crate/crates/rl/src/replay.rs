use std::collections::VecDeque;

use rand::Rng;
use vmc_core::{Frame, ObservationBatch, RngPolicy};

use crate::rollout::{Segment, SegmentEnd};
use crate::RlError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StoredEpisode {
    pub id: u64,
    /// Observations `0 ..= len`.
    pub frames: Vec<Frame>,
    pub actions: Vec<Vec<f32>>,
    pub rewards: Vec<f32>,
    pub terminal: bool,
    pub closed: bool,
}

impl StoredEpisode {
    fn len(&self) -> usize {
        self.actions.len()
    }

    fn stack(&self, t: usize, depth: usize) -> Vec<&Frame> {
        (0..depth).map(|k| &self.frames[(t + k + 1).saturating_sub(depth)]).collect()
    }
}

/// A sampled minibatch. `rewards` holds the discounted n-step sums and
/// `discounts` the factor applied to the bootstrap value (zero when the
/// window reaches a terminal state).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySample {
    pub obs: ObservationBatch,
    pub actions: Vec<Vec<f32>>,
    pub rewards: Vec<f32>,
    pub discounts: Vec<f32>,
    pub next_obs: ObservationBatch,
    /// `(episode, step)` of each sampled transition.
    pub index: Vec<(u64, usize)>,
    /// Number of rewards summed for each sample.
    pub window: Vec<usize>,
}

/// Episode-structured transition storage with n-step sampling. Windows are
/// cut at the end of their episode and never include transitions of
/// another one. Transitions of an open episode are only sampled once a
/// full window of `n` rewards is stored after them.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    n_step: usize,
    gamma: f64,
    depth: usize,
    pub(crate) episodes: VecDeque<StoredEpisode>,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, n_step: usize, gamma: f64, depth: usize) -> Result<Self, RlError> {
        if capacity == 0 || n_step == 0 || depth == 0 {
            return Err(RlError::Config("replay capacity, n-step and frame stack must be positive".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(RlError::Config(format!("discount {gamma} outside [0, 1]")));
        }
        Ok(Self { capacity, n_step, gamma, depth, episodes: VecDeque::new(), len: 0 })
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn n_step(&self) -> usize {
        self.n_step
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    /// Appends a collected segment, continuing its episode when the segment
    /// picks up where the stored part ends. Segments of evicted or unknown
    /// episodes that do not start at step 0 are ignored.
    pub fn add_segment(&mut self, seg: &Segment) {
        if seg.is_empty() {
            return;
        }
        let closes = seg.end != SegmentEnd::Cut;
        let terminal = seg.end == SegmentEnd::Terminal;
        if let Some(ep) = self.episodes.iter_mut().rev().find(|e| e.id == seg.episode) {
            if ep.closed || ep.len() != seg.start {
                log::warn!("segment of episode {} at step {} does not continue the buffer", seg.episode, seg.start);
                return;
            }
            ep.frames.extend_from_slice(&seg.frames[1..]);
            ep.actions.extend_from_slice(&seg.actions);
            ep.rewards.extend_from_slice(&seg.rewards);
            ep.closed = closes;
            ep.terminal = terminal;
        } else if seg.start == 0 {
            self.episodes.push_back(StoredEpisode {
                id: seg.episode,
                frames: seg.frames.clone(),
                actions: seg.actions.clone(),
                rewards: seg.rewards.clone(),
                terminal,
                closed: closes,
            });
        } else {
            return;
        }
        self.len += seg.len();
        while self.len > self.capacity && self.episodes.len() > 1 {
            let e = self.episodes.pop_front().expect("non-empty");
            self.len -= e.len();
        }
    }

    /// Drops every stored transition of `episode`.
    pub fn discard(&mut self, episode: u64) {
        if let Some(pos) = self.episodes.iter().position(|e| e.id == episode) {
            let e = self.episodes.remove(pos).expect("position is valid");
            self.len -= e.len();
        }
    }

    fn valid_count(&self, e: &StoredEpisode) -> usize {
        if e.closed {
            e.len()
        } else {
            (e.len() + 1).saturating_sub(self.n_step)
        }
    }

    /// Transitions that can currently be sampled.
    pub fn sampleable(&self) -> usize {
        self.episodes.iter().map(|e| self.valid_count(e)).sum()
    }

    /// Window of up to `n` rewards starting at step `t`:
    /// `(sum, discount, steps)`.
    fn window(&self, e: &StoredEpisode, t: usize) -> (f64, f64, usize) {
        let m = self.n_step.min(e.len() - t);
        let mut sum = 0.0;
        let mut g = 1.0;
        for k in 0..m {
            sum += g * e.rewards[t + k] as f64;
            g *= self.gamma;
        }
        let discount = if e.terminal && t + m == e.len() { 0.0 } else { g };
        (sum, discount, m)
    }

    /// Draws `batch` transitions uniformly (with replacement) from the
    /// random stream `("replay/sample", counter)`.
    pub fn sample(&self, batch: usize, rng: &RngPolicy, counter: u64) -> Result<ReplaySample, RlError> {
        let counts: Vec<usize> = self.episodes.iter().map(|e| self.valid_count(e)).collect();
        let total: usize = counts.iter().sum();
        if batch == 0 || total < batch {
            return Err(RlError::InsufficientData { needed: batch.max(1), got: total });
        }
        let mut r = rng.rng("replay/sample", counter);
        let mut picks = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mut k = r.random_range(0..total);
            let mut ei = 0;
            while k >= counts[ei] {
                k -= counts[ei];
                ei += 1;
            }
            picks.push((ei, k));
        }
        let mut obs = Vec::with_capacity(batch);
        let mut next = Vec::with_capacity(batch);
        let (mut actions, mut rewards, mut discounts, mut index, mut window) =
            (Vec::with_capacity(batch), Vec::with_capacity(batch), Vec::with_capacity(batch), Vec::with_capacity(batch), Vec::with_capacity(batch));
        for &(ei, t) in &picks {
            let e = &self.episodes[ei];
            let (sum, discount, m) = self.window(e, t);
            obs.push(e.stack(t, self.depth));
            next.push(e.stack(t + m, self.depth));
            actions.push(e.actions[t].clone());
            rewards.push(sum as f32);
            discounts.push(discount as f32);
            index.push((e.id, t));
            window.push(m);
        }
        Ok(ReplaySample {
            obs: ObservationBatch::from_frames(&obs)?,
            actions,
            rewards,
            discounts,
            next_obs: ObservationBatch::from_frames(&next)?,
            index,
            window,
        })
    }

    pub(crate) fn restore_episodes(&mut self, episodes: Vec<StoredEpisode>) {
        self.len = episodes.iter().map(StoredEpisode::len).sum();
        self.episodes = episodes.into();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vmc_core::FrameShape;

    fn segment(episode: u64, start: usize, rewards: &[f32], end: SegmentEnd) -> Segment {
        let shape = FrameShape::new(1, 1, 1);
        let f = |v: usize| Frame::filled(shape, v as u8);
        Segment {
            episode,
            start,
            history: vec![],
            frames: (start..=start + rewards.len()).map(f).collect(),
            proprio: vec![vec![]; rewards.len() + 1],
            actions: (0..rewards.len()).map(|i| vec![(start + i) as f32]).collect(),
            rewards: rewards.to_vec(),
            log_probs: vec![0.0; rewards.len()],
            values: vec![0.0; rewards.len()],
            end,
        }
    }

    #[test]
    fn windows_stop_at_terminal() {
        let mut b = ReplayBuffer::new(100, 3, 0.5, 1).unwrap();
        b.add_segment(&segment(0, 0, &[1.0, 1.0, 1.0, 1.0], SegmentEnd::Terminal));
        let e = &b.episodes[0];
        assert_eq!(b.window(e, 0), (1.75, 0.125, 3));
        assert_eq!(b.window(e, 2), (1.5, 0.0, 2));
        assert_eq!(b.window(e, 3), (1.0, 0.0, 1));
    }

    #[test]
    fn truncated_episodes_bootstrap() {
        let mut b = ReplayBuffer::new(100, 3, 0.5, 1).unwrap();
        b.add_segment(&segment(0, 0, &[1.0, 1.0], SegmentEnd::Truncated));
        assert_eq!(b.window(&b.episodes[0], 1), (1.0, 0.5, 1));
    }

    #[test]
    fn open_episodes_need_full_windows() {
        let mut b = ReplayBuffer::new(100, 3, 0.9, 1).unwrap();
        b.add_segment(&segment(0, 0, &[1.0, 1.0], SegmentEnd::Cut));
        assert_eq!(b.sampleable(), 0);
        b.add_segment(&segment(0, 2, &[1.0, 1.0], SegmentEnd::Cut));
        assert_eq!(b.sampleable(), 2);
        b.add_segment(&segment(0, 4, &[1.0], SegmentEnd::Truncated));
        assert_eq!((b.sampleable(), b.len()), (5, 5));
    }

    #[test]
    fn eviction_drops_oldest_episodes() {
        let mut b = ReplayBuffer::new(5, 1, 0.9, 1).unwrap();
        for id in 0..3 {
            b.add_segment(&segment(id, 0, &[0.0; 2], SegmentEnd::Truncated));
        }
        assert_eq!(b.len(), 4);
        assert_eq!(b.episodes.front().unwrap().id, 1);
    }

    #[test]
    fn sampling_needs_enough_transitions() {
        let b = ReplayBuffer::new(5, 1, 0.9, 1).unwrap();
        assert!(matches!(b.sample(2, &RngPolicy::new(0), 0), Err(RlError::InsufficientData { .. })));
    }
}

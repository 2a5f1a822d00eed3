use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use vmc_augment::{AugmentationSpec, Augmenter};
use vmc_core::{Frame, FrameShape, ObservationBatch, RngPolicy};
use vmc_encoders::{Backend, ConvLayerSpec, ConvNetSpec, EncoderVariant, Readout};
use vmc_nn::io::{push_adam, push_store, restore_adam, restore_store, Archive};
use vmc_nn::{Adam, AdamConfig, Graph, Mlp, ParamId, ParamKind, ParamStore, Tensor, Var};

use crate::encoder::{feature_dim, RlEncoder};
use crate::eval::ActingPolicy;
use crate::gae::compute_gae;
use crate::rollout::{ActKey, ActOutput, Rollout, RolloutAgent, SegmentEnd};
use crate::RlError;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnPolicyConfig {
    pub encoder: RlEncoder,
    pub frame_stack: usize,
    /// Surrogate ratio clip.
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Steps collected per environment between updates.
    pub rollout_len: usize,
    pub num_envs: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Rewards are multiplied by this before advantage estimation.
    pub reward_scale: f64,
    pub max_grad_norm: f64,
    /// Random-shift padding used when re-evaluating observations during
    /// the update; 0 disables it.
    pub shift_pad: usize,
    /// Standardize advantages within each minibatch.
    pub normalize_advantages: bool,
    pub init_log_std: f64,
    pub hidden: Vec<usize>,
    /// Concatenate proprioceptive state to the image features.
    pub use_proprio: bool,
    pub seed: u64,
}

impl Default for OnPolicyConfig {
    fn default() -> Self {
        Self {
            encoder: RlEncoder::Scratch { spec: ConvNetSpec::scratch(EncoderVariant::Onpolicy) },
            frame_stack: 1,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            rollout_len: 32,
            num_envs: 8,
            epochs: 5,
            minibatches: 4,
            lr: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            reward_scale: 1.0,
            max_grad_norm: 1.0,
            shift_pad: 10,
            normalize_advantages: true,
            init_log_std: 0.0,
            hidden: vec![256, 128, 64],
            use_proprio: true,
            seed: 0,
        }
    }
}

impl OnPolicyConfig {
    /// Small encoder and networks sized for 16x16 frames on a CPU.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            encoder: RlEncoder::Scratch {
                spec: ConvNetSpec {
                    layers: vec![ConvLayerSpec::new(16, 3, 2, 0, false); 2],
                    readout: Readout::LayerNormProjection { dim: 64 },
                },
            },
            shift_pad: 1,
            hidden: vec![128, 64],
            rollout_len: 64,
            lr: 1e-3,
            reward_scale: 0.1,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: String| Err(RlError::Config(m));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad(format!("clip ratio {} outside (0, 1)", self.clip));
        }
        if !(0.0..=1.0).contains(&self.lambda) || !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} / lambda {} outside [0, 1]", self.gamma, self.lambda));
        }
        if self.rollout_len == 0 || self.num_envs == 0 || self.epochs == 0 || self.minibatches == 0 || self.frame_stack == 0 {
            return bad("rollout length, environments, epochs, minibatches and frame stack must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.max_grad_norm > 0.0) {
            return bad(format!("learning rate {} / gradient clip {}", self.lr, self.max_grad_norm));
        }
        if !(self.value_coef.is_finite() && self.entropy_coef.is_finite() && self.init_log_std.is_finite())
            || !(self.reward_scale.is_finite() && self.reward_scale > 0.0)
        {
            return bad("loss coefficients must be finite".into());
        }
        Ok(())
    }
}

/// Flattened on-policy experience with advantages and returns attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub obs: ObservationBatch,
    pub proprio: Vec<Vec<f32>>,
    pub actions: Vec<Vec<f32>>,
    pub log_probs: Vec<f32>,
    pub rewards: Vec<f32>,
    pub values: Vec<f32>,
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn select(&self, idx: &[usize]) -> RolloutBatch {
        let pick = |v: &[f32]| idx.iter().map(|&i| v[i]).collect::<Vec<f32>>();
        RolloutBatch {
            obs: self.obs.select(idx),
            proprio: idx.iter().map(|&i| self.proprio[i].clone()).collect(),
            actions: idx.iter().map(|&i| self.actions[i].clone()).collect(),
            log_probs: pick(&self.log_probs),
            rewards: pick(&self.rewards),
            values: pick(&self.values),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
        }
    }
}

/// Mean clipped-surrogate objective `min(r A, clamp(r, 1-eps, 1+eps) A)`.
pub fn clipped_surrogate(ratios: &[f64], advantages: &[f64], eps: f64) -> f64 {
    let s: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a))
        .sum();
    s / ratios.len() as f64
}

fn surrogate_graph(g: &mut Graph<f32>, ratio: Var, adv: Var, eps: f64) -> Result<Var, RlError> {
    let s1 = g.mul(ratio, adv)?;
    let c = g.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let s2 = g.mul(c, adv)?;
    let m = g.min(s1, s2)?;
    Ok(g.mean_all(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnPolicyLosses {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left the clip range.
    pub clip_fraction: f64,
}

/// Gaussian policy and value function over image features (plus proprio).
#[derive(Debug)]
pub struct OnPolicyAgent {
    config: OnPolicyConfig,
    action_dim: usize,
    proprio_dim: usize,
    backend: Backend<f32>,
    store: ParamStore<f32>,
    actor: Mlp,
    log_std: ParamId,
    critic: Mlp,
    enc_opt: Adam<f32>,
    opt: Adam<f32>,
    augmenter: Augmenter,
    rng: RngPolicy,
    aug_rng: RngPolicy,
    updates: u64,
}

struct Outputs {
    mu: Var,
    value: Var,
}

impl OnPolicyAgent {
    pub fn new(config: OnPolicyConfig, frame: FrameShape, action_dim: usize, proprio_dim: usize) -> Result<Self, RlError> {
        config.validate()?;
        let rng = RngPolicy::new(config.seed);
        let backend = config.encoder.build(frame, config.frame_stack, rng.derive_seed("rl/encoder", 0))?;
        let proprio_dim = if config.use_proprio { proprio_dim } else { 0 };
        let input = feature_dim(&backend, config.frame_stack) + proprio_dim;
        let mut store = ParamStore::new();
        let mut r = rng.rng("rl/heads", 0);
        let actor = Mlp::new(&mut store, "actor", input, &config.hidden, action_dim, &mut r);
        if let Some(l) = actor.layers.last() {
            store.get_mut(l.weight).data.iter_mut().for_each(|w| *w *= 0.01);
        }
        let log_std = store.add("actor.log_std", Tensor::full(vec![action_dim], config.init_log_std as f32), ParamKind::Weight);
        let critic = Mlp::new(&mut store, "critic", input, &config.hidden, 1, &mut r);
        let augmenter = if config.shift_pad == 0 {
            Augmenter::identity()
        } else {
            Augmenter::new(AugmentationSpec::shift(config.shift_pad), None)?
        };
        Ok(Self {
            enc_opt: Adam::new(AdamConfig::with_lr(config.lr), backend.store()),
            opt: Adam::new(AdamConfig::with_lr(config.lr), &store),
            aug_rng: rng.child("rl/augment", 0),
            config,
            action_dim,
            proprio_dim,
            backend,
            store,
            actor,
            log_std,
            critic,
            augmenter,
            rng,
            updates: 0,
        })
    }

    /// Replaces the augmentation stream, leaving everything else as is.
    pub fn with_augment_seed(mut self, seed: u64) -> Self {
        self.aug_rng = RngPolicy::new(seed);
        self
    }

    pub fn config(&self) -> &OnPolicyConfig {
        &self.config
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn backend(&self) -> &Backend<f32> {
        &self.backend
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn forward(&self, g: &mut Graph<f32>, obs: &ObservationBatch, proprio: &[Vec<f32>]) -> Result<Outputs, RlError> {
        let n = obs.len();
        let mut feat = self.backend.encode(g, obs)?;
        if self.proprio_dim > 0 {
            if proprio.len() != n || proprio.iter().any(|p| p.len() != self.proprio_dim) {
                return Err(RlError::Shape(format!("expected {n} proprio vectors of {}", self.proprio_dim)));
            }
            let p = g.input(Tensor::new(vec![n, self.proprio_dim], proprio.iter().flatten().copied().collect()));
            feat = g.concat_cols(&[feat, p])?;
        }
        let mu = self.actor.forward(g, &self.store, feat)?;
        let value = self.critic.forward(g, &self.store, feat)?;
        Ok(Outputs { mu, value })
    }

    fn log_std_values(&self) -> Vec<f32> {
        self.store.get(self.log_std).data.clone()
    }

    /// Values of the given observations (evaluation mode).
    pub fn values(&self, obs: &ObservationBatch, proprio: &[Vec<f32>]) -> Result<Vec<f32>, RlError> {
        let mut g = Graph::new(false);
        let o = self.forward(&mut g, obs, proprio)?;
        Ok(g.value(o.value).data.clone())
    }

    pub fn mean_actions(&self, obs: &ObservationBatch, proprio: &[Vec<f32>]) -> Result<Vec<Vec<f32>>, RlError> {
        let mut g = Graph::new(false);
        let o = self.forward(&mut g, obs, proprio)?;
        Ok(g.value(o.mu).data.chunks(self.action_dim).map(<[f32]>::to_vec).collect())
    }

    /// Attaches bootstrap values and GAE estimates to a collected rollout.
    /// Terminal segments bootstrap from zero; truncated and cut segments
    /// from the value of their final observation.
    pub fn build_batch(&self, rollout: &Rollout) -> Result<RolloutBatch, RlError> {
        let segs: Vec<_> = rollout.segments.iter().filter(|s| !s.is_empty()).collect();
        if segs.is_empty() {
            return Err(RlError::InsufficientData { needed: 1, got: 0 });
        }
        let tails: Vec<usize> = (0..segs.len()).filter(|&i| segs[i].end != SegmentEnd::Terminal).collect();
        let mut boot = vec![0.0f32; segs.len()];
        if !tails.is_empty() {
            let stacks: Vec<Vec<&Frame>> = tails.iter().map(|&i| segs[i].stack(segs[i].len())).collect();
            let proprio: Vec<Vec<f32>> = tails.iter().map(|&i| segs[i].proprio[segs[i].len()].clone()).collect();
            let v = self.values(&ObservationBatch::from_frames(&stacks)?, &proprio)?;
            for (&i, v) in tails.iter().zip(v) {
                boot[i] = v;
            }
        }
        let mut stacks = Vec::new();
        let mut b = RolloutBatch {
            obs: ObservationBatch::zeros([0, 1, 1, 1], vmc_core::ValueDomain::Uint8, 1)?,
            proprio: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        };
        for (s, &bv) in segs.iter().zip(&boot) {
            let rewards: Vec<f64> = s.rewards.iter().map(|&r| r as f64 * self.config.reward_scale).collect();
            let mut values: Vec<f64> = s.values.iter().map(|&v| v as f64).collect();
            values.push(bv as f64);
            let (adv, ret) = compute_gae(&rewards, &values, self.config.gamma, self.config.lambda)?;
            for t in 0..s.len() {
                stacks.push(s.stack(t));
            }
            b.proprio.extend_from_slice(&s.proprio[..s.len()]);
            b.actions.extend_from_slice(&s.actions);
            b.log_probs.extend_from_slice(&s.log_probs);
            b.rewards.extend_from_slice(&s.rewards);
            b.values.extend_from_slice(&s.values);
            b.advantages.extend(adv.iter().map(|&a| a as f32));
            b.returns.extend(ret.iter().map(|&r| r as f32));
        }
        b.obs = ObservationBatch::from_frames(&stacks)?;
        Ok(b)
    }

    /// Epochs of shuffled minibatch updates over `batch`.
    pub fn update(&mut self, batch: &RolloutBatch) -> Result<OnPolicyLosses, RlError> {
        let n = batch.len();
        if n == 0 {
            return Err(RlError::InsufficientData { needed: 1, got: 0 });
        }
        if let Some(i) = (0..n).find(|&i| !batch.advantages[i].is_finite() || !batch.returns[i].is_finite()) {
            return Err(RlError::Numerical(format!(
                "sample {i}: advantage {} / return {}",
                batch.advantages[i], batch.returns[i]
            )));
        }
        let c = &self.config;
        let (epochs, mbs) = (c.epochs, c.minibatches.min(n));
        let size = n.div_ceil(mbs);
        let u = self.updates;
        let mut totals = [0.0f64; 4];
        let mut count = 0usize;
        for e in 0..epochs {
            let mut order: Vec<usize> = (0..n).collect();
            let round = u * epochs as u64 + e as u64;
            order.shuffle(&mut self.rng.rng("rl/shuffle", round));
            for (k, idx) in order.chunks(size).enumerate() {
                let counters: Vec<u64> = (0..idx.len()).map(|j| round * n as u64 + (k * size + j) as u64).collect();
                let l = self.minibatch(&batch.select(idx), &counters)?;
                for (t, v) in totals.iter_mut().zip(l) {
                    *t += v;
                }
                count += 1;
            }
        }
        self.updates += 1;
        let m = count as f64;
        Ok(OnPolicyLosses { policy: totals[0] / m, value: totals[1] / m, entropy: totals[2] / m, clip_fraction: totals[3] / m })
    }

    fn minibatch(&mut self, mb: &RolloutBatch, counters: &[u64]) -> Result<[f64; 4], RlError> {
        let n = mb.len();
        let a_dim = self.action_dim;
        let c = self.config.clone();
        let obs = self.augmenter.apply(&mb.obs, &self.aug_rng, counters)?;
        let mut adv: Vec<f64> = mb.advantages.iter().map(|&a| a as f64).collect();
        if c.normalize_advantages {
            let mean = adv.iter().sum::<f64>() / n as f64;
            let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
        }
        let mut g = Graph::new(true);
        let o = self.forward(&mut g, &obs, &mb.proprio)?;
        let ls = g.param(&self.store, self.log_std);
        let ls_rows = g.broadcast_rows(ls, n)?;
        let neg = g.scale(ls_rows, -1.0);
        let inv_std = g.exp(neg);
        let act = g.input(Tensor::new(vec![n, a_dim], mb.actions.iter().flatten().copied().collect()));
        let diff = g.sub(act, o.mu)?;
        let z = g.mul(diff, inv_std)?;
        let z2 = g.square(z);
        let sq = g.sum_cols(z2)?;
        let sls = g.sum_cols(ls_rows)?;
        let half = g.scale(sq, -0.5);
        let lp = g.sub(half, sls)?;
        let logp = g.add_scalar(lp, -0.5 * a_dim as f64 * LN_2PI);
        let old = g.input(Tensor::new(vec![n, 1], mb.log_probs.clone()));
        let dlp = g.sub(logp, old)?;
        let ratio = g.exp(dlp);
        let adv_v = g.input(Tensor::new(vec![n, 1], adv.iter().map(|&a| a as f32).collect()));
        let surr = surrogate_graph(&mut g, ratio, adv_v, c.clip)?;
        let policy_loss = g.scale(surr, -1.0);
        let ret = g.input(Tensor::new(vec![n, 1], mb.returns.clone()));
        let value_loss = g.mse(o.value, ret)?;
        let ent_sum = g.sum_all(ls);
        let entropy = g.add_scalar(ent_sum, 0.5 * a_dim as f64 * (1.0 + LN_2PI));
        let vl = g.scale(value_loss, c.value_coef);
        let el = g.scale(entropy, -c.entropy_coef);
        let pv = g.add(policy_loss, vl)?;
        let loss = g.add(pv, el)?;
        let lv = g.value(loss).data[0] as f64;
        if !lv.is_finite() {
            return Err(RlError::Numerical(format!("on-policy loss {lv} at update {}", self.updates)));
        }
        let clipped = g.value(ratio).data.iter().filter(|&&r| (r as f64 - 1.0).abs() > c.clip).count();
        let out = [
            g.value(policy_loss).data[0] as f64,
            g.value(value_loss).data[0] as f64,
            g.value(entropy).data[0] as f64,
            clipped as f64 / n as f64,
        ];
        let mut grads = g.backward(loss)?;
        grads.clip_global_norm(c.max_grad_norm);
        self.opt.step(&mut self.store, &grads);
        self.enc_opt.step(self.backend.store_mut(), &grads);
        Ok(out)
    }

    pub(crate) fn save_into(&self, a: &mut Archive<f32>) {
        push_store(a, "encoder/", self.backend.store());
        push_store(a, "heads/", &self.store);
        push_adam(a, "opt/encoder/", &self.enc_opt);
        push_adam(a, "opt/heads/", &self.opt);
    }

    pub(crate) fn load_from(&mut self, a: &Archive<f32>, updates: u64) -> Result<(), RlError> {
        restore_store(a, "encoder/", self.backend.store_mut())?;
        restore_store(a, "heads/", &mut self.store)?;
        restore_adam(a, "opt/encoder/", &mut self.enc_opt);
        restore_adam(a, "opt/heads/", &mut self.opt);
        self.updates = updates;
        Ok(())
    }
}

impl RolloutAgent for OnPolicyAgent {
    fn frame_stack(&self) -> usize {
        self.config.frame_stack
    }

    /// Samples from the Gaussian policy with noise addressed by `keys`.
    fn act(&mut self, obs: &ObservationBatch, proprio: &[Vec<f32>], keys: &[ActKey]) -> Result<Vec<ActOutput>, RlError> {
        let mut g = Graph::new(false);
        let o = self.forward(&mut g, obs, proprio)?;
        let ls = self.log_std_values();
        let mu = &g.value(o.mu).data;
        let v = &g.value(o.value).data;
        let a_dim = self.action_dim;
        Ok(keys
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let mut r = self.rng.child("rl/policy", k.episode).rng("step", k.step as u64);
                let mut lp = -0.5 * a_dim as f64 * LN_2PI;
                let action = (0..a_dim)
                    .map(|j| {
                        let e: f64 = r.sample(StandardNormal);
                        lp += -0.5 * e * e - ls[j] as f64;
                        (mu[i * a_dim + j] as f64 + e * (ls[j] as f64).exp()) as f32
                    })
                    .collect();
                ActOutput { action, log_prob: lp as f32, value: v[i] }
            })
            .collect())
    }
}

impl ActingPolicy for OnPolicyAgent {
    fn frame_stack(&self) -> usize {
        self.config.frame_stack
    }

    fn greedy(&self, obs: &ObservationBatch, proprio: &[Vec<f32>]) -> Result<Vec<Vec<f32>>, RlError> {
        self.mean_actions(obs, proprio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_surrogate_matches_scalar_version() {
        let ratios = [0.5f32, 0.9, 1.0, 1.1, 1.5, 2.0];
        let adv = [1.0f32, -1.0, 0.3, 2.0, -0.5, 1.5];
        let mut g = Graph::new(false);
        let r = g.input(Tensor::new(vec![6, 1], ratios.to_vec()));
        let a = g.input(Tensor::new(vec![6, 1], adv.to_vec()));
        let s = surrogate_graph(&mut g, r, a, 0.2).unwrap();
        let ours = g.value(s).data[0] as f64;
        let r64: Vec<f64> = ratios.iter().map(|&x| x as f64).collect();
        let a64: Vec<f64> = adv.iter().map(|&x| x as f64).collect();
        assert!((ours - clipped_surrogate(&r64, &a64, 0.2)).abs() < 1e-6);
    }

    #[test]
    fn clip_range_is_checked() {
        let c = OnPolicyConfig { clip: 1.0, ..OnPolicyConfig::default() };
        assert!(c.validate().is_err());
        let c = OnPolicyConfig { lambda: 1.5, ..OnPolicyConfig::default() };
        assert!(c.validate().is_err());
    }
}

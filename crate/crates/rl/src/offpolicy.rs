use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use vmc_augment::{AugmentationSpec, Augmenter};
use vmc_core::{FrameShape, ObservationBatch, RngPolicy};
use vmc_encoders::{Backend, ConvLayerSpec, ConvNetSpec, EncoderVariant, Readout};
use vmc_nn::io::{push_adam, push_store, restore_adam, restore_store, Archive};
use vmc_nn::{Adam, AdamConfig, Graph, LayerNorm, Linear, Mlp, ParamStore, Tensor, Var};

use crate::encoder::{feature_dim, RlEncoder};
use crate::eval::ActingPolicy;
use crate::replay::{ReplayBuffer, ReplaySample};
use crate::rollout::{ActKey, ActOutput, RolloutAgent};
use crate::RlError;

/// Linearly decaying exploration scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub end: f64,
    /// Environment steps over which the scale moves from `initial` to `final`.
    pub duration: u64,
}

impl NoiseSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if self.duration == 0 {
            return self.end;
        }
        let f = (step as f64 / self.duration as f64).min(1.0);
        self.initial + (self.end - self.initial) * f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffPolicyConfig {
    pub encoder: RlEncoder,
    pub frame_stack: usize,
    pub gamma: f64,
    pub n_step: usize,
    /// Target-critic smoothing coefficient.
    pub tau: f64,
    pub batch_size: usize,
    /// Random-shift padding; 0 disables augmentation.
    pub shift_pad: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Width of the layer-normalized trunk output.
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub noise: NoiseSchedule,
    /// Clip of the smoothing noise in targets and actor updates.
    pub noise_clip: f64,
    /// Uniformly random actions before learning starts.
    pub seed_steps: u64,
    /// Environment steps between updates.
    pub update_every: u64,
    pub replay_capacity: usize,
    pub num_envs: usize,
    pub seed: u64,
}

impl Default for OffPolicyConfig {
    fn default() -> Self {
        Self {
            encoder: RlEncoder::Scratch { spec: ConvNetSpec::scratch(EncoderVariant::Offpolicy) },
            frame_stack: 3,
            gamma: 0.99,
            n_step: 3,
            tau: 0.01,
            batch_size: 256,
            shift_pad: 4,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            feature_dim: 50,
            hidden_dim: 1024,
            noise: NoiseSchedule { initial: 1.0, end: 0.1, duration: 500_000 },
            noise_clip: 0.3,
            seed_steps: 2000,
            update_every: 1,
            replay_capacity: 1_000_000,
            num_envs: 1,
            seed: 0,
        }
    }
}

impl OffPolicyConfig {
    /// Small encoder and networks sized for 16x16 frames on a CPU.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            encoder: RlEncoder::Scratch {
                spec: ConvNetSpec {
                    layers: vec![ConvLayerSpec::new(16, 3, 2, 0, false), ConvLayerSpec::new(16, 3, 1, 0, false)],
                    readout: Readout::Flatten,
                },
            },
            hidden_dim: 256,
            batch_size: 128,
            shift_pad: 1,
            noise: NoiseSchedule { initial: 1.0, end: 0.1, duration: 20_000 },
            seed_steps: 1000,
            update_every: 2,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            replay_capacity: 100_000,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: String| Err(RlError::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("discount {} outside [0, 1]", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("target smoothing {} outside (0, 1]", self.tau));
        }
        if self.n_step == 0 || self.batch_size == 0 || self.frame_stack == 0 || self.num_envs == 0 {
            return bad("n-step, batch size, frame stack and environment count must be positive".into());
        }
        if self.update_every == 0 || self.replay_capacity == 0 || self.feature_dim == 0 || self.hidden_dim == 0 {
            return bad("update interval, replay capacity and layer widths must be positive".into());
        }
        for (name, lr) in [("actor", self.actor_lr), ("critic", self.critic_lr)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad(format!("{name} learning rate {lr}"));
            }
        }
        let n = self.noise;
        if !(n.initial >= 0.0 && n.end >= 0.0 && n.initial.is_finite() && n.end.is_finite()) || !(self.noise_clip >= 0.0) {
            return bad("exploration noise must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Bootstrapped target `r + discount * min(q1, q2)`.
pub fn td_target(reward: f32, discount: f32, q1: f32, q2: f32) -> f32 {
    reward + discount * q1.min(q2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffPolicyLosses {
    pub critic: f64,
    pub actor: f64,
    pub q_mean: f64,
}

/// `tanh(LayerNorm(Linear(x)))`.
#[derive(Debug, Clone)]
struct Trunk {
    linear: Linear,
    norm: LayerNorm,
}

impl Trunk {
    fn new<R: Rng>(store: &mut ParamStore<f32>, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            linear: Linear::new(store, &format!("{name}.linear"), input, output, 1.0, rng),
            norm: LayerNorm::new(store, &format!("{name}.norm"), output),
        }
    }

    fn forward(&self, g: &mut Graph<f32>, store: &ParamStore<f32>, x: Var) -> Result<Var, RlError> {
        let h = self.linear.forward(g, store, x)?;
        let h = self.norm.forward(g, store, h)?;
        Ok(g.tanh(h))
    }
}

#[derive(Debug, Clone)]
struct Actor {
    trunk: Trunk,
    policy: Mlp,
}

impl Actor {
    fn mean(&self, g: &mut Graph<f32>, store: &ParamStore<f32>, feat: Var) -> Result<Var, RlError> {
        let h = self.trunk.forward(g, store, feat)?;
        let m = self.policy.forward(g, store, h)?;
        Ok(g.tanh(m))
    }
}

#[derive(Debug, Clone)]
struct Critic {
    trunk: Trunk,
    q1: Mlp,
    q2: Mlp,
}

impl Critic {
    fn forward(&self, g: &mut Graph<f32>, store: &ParamStore<f32>, feat: Var, action: Var) -> Result<(Var, Var), RlError> {
        let h = self.trunk.forward(g, store, feat)?;
        let ha = g.concat_cols(&[h, action])?;
        Ok((self.q1.forward(g, store, ha)?, self.q2.forward(g, store, ha)?))
    }
}

/// Twin-critic deterministic actor-critic on pixels. The encoder is
/// trained by the critic loss only; the actor sees detached features.
#[derive(Debug)]
pub struct OffPolicyAgent {
    config: OffPolicyConfig,
    action_dim: usize,
    backend: Backend<f32>,
    actor: Actor,
    actor_store: ParamStore<f32>,
    critic: Critic,
    critic_store: ParamStore<f32>,
    critic_target: ParamStore<f32>,
    enc_opt: Adam<f32>,
    actor_opt: Adam<f32>,
    critic_opt: Adam<f32>,
    augmenter: Augmenter,
    rng: RngPolicy,
    updates: u64,
    env_step: u64,
}

impl OffPolicyAgent {
    pub fn new(config: OffPolicyConfig, frame: FrameShape, action_dim: usize) -> Result<Self, RlError> {
        config.validate()?;
        let rng = RngPolicy::new(config.seed);
        let backend = config.encoder.build(frame, config.frame_stack, rng.derive_seed("rl/encoder", 0))?;
        let repr = feature_dim(&backend, config.frame_stack);
        let (f, h) = (config.feature_dim, config.hidden_dim);
        let mut actor_store = ParamStore::new();
        let mut r = rng.rng("rl/actor", 0);
        let actor = Actor {
            trunk: Trunk::new(&mut actor_store, "actor.trunk", repr, f, &mut r),
            policy: Mlp::new(&mut actor_store, "actor.policy", f, &[h, h], action_dim, &mut r),
        };
        let mut critic_store = ParamStore::new();
        let mut r = rng.rng("rl/critic", 0);
        let critic = Critic {
            trunk: Trunk::new(&mut critic_store, "critic.trunk", repr, f, &mut r),
            q1: Mlp::new(&mut critic_store, "critic.q1", f + action_dim, &[h, h], 1, &mut r),
            q2: Mlp::new(&mut critic_store, "critic.q2", f + action_dim, &[h, h], 1, &mut r),
        };
        let critic_target = critic_store.duplicate();
        let augmenter = if config.shift_pad == 0 {
            Augmenter::identity()
        } else {
            Augmenter::new(AugmentationSpec::shift(config.shift_pad), None)?
        };
        Ok(Self {
            enc_opt: Adam::new(AdamConfig::with_lr(config.critic_lr), backend.store()),
            actor_opt: Adam::new(AdamConfig::with_lr(config.actor_lr), &actor_store),
            critic_opt: Adam::new(AdamConfig::with_lr(config.critic_lr), &critic_store),
            config,
            action_dim,
            backend,
            actor,
            actor_store,
            critic,
            critic_store,
            critic_target,
            augmenter,
            rng,
            updates: 0,
            env_step: 0,
        })
    }

    pub fn config(&self) -> &OffPolicyConfig {
        &self.config
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Environment step used by the exploration schedule.
    pub fn set_env_step(&mut self, step: u64) {
        self.env_step = step;
    }

    pub fn env_step(&self) -> u64 {
        self.env_step
    }

    pub fn backend(&self) -> &Backend<f32> {
        &self.backend
    }

    pub fn actor_store(&self) -> &ParamStore<f32> {
        &self.actor_store
    }

    pub fn critic_store(&self) -> &ParamStore<f32> {
        &self.critic_store
    }

    pub fn critic_target(&self) -> &ParamStore<f32> {
        &self.critic_target
    }

    fn noise(&self, stream: &str, counter: u64, n: usize, std: f64, clip: Option<f64>) -> Vec<f32> {
        let mut r = self.rng.rng(stream, counter);
        (0..n)
            .map(|_| {
                let e: f64 = r.sample::<f64, _>(StandardNormal) * std;
                clip.map_or(e, |c| e.clamp(-c, c)) as f32
            })
            .collect()
    }

    fn action_tensor(&self, actions: &[Vec<f32>]) -> Tensor<f32> {
        Tensor::new(vec![actions.len(), self.action_dim], actions.iter().flatten().copied().collect())
    }

    /// Deterministic actions (the policy mean).
    pub fn mean_actions(&self, obs: &ObservationBatch) -> Result<Vec<Vec<f32>>, RlError> {
        let mut g = Graph::new(false);
        let feat = self.backend.encode(&mut g, obs)?;
        let mu = self.actor.mean(&mut g, &self.actor_store, feat)?;
        Ok(g.value(mu).data.chunks(self.action_dim).map(<[f32]>::to_vec).collect())
    }

    /// `clamp(mean + noise, -1, 1)` with the clamp passing gradients
    /// through to the mean.
    fn perturbed(&self, g: &mut Graph<f32>, mu: Var, noise: &[f32]) -> Var {
        let delta: Vec<f32> =
            g.value(mu).data.iter().zip(noise).map(|(&m, &e)| (m + e).clamp(-1.0, 1.0) - m).collect();
        let shape = g.shape(mu).to_vec();
        let d = g.input(Tensor::new(shape, delta));
        g.add(mu, d).expect("same shape")
    }

    /// TD targets for `sample` given already augmented next observations.
    pub fn td_targets(&self, next_obs: &ObservationBatch, sample: &ReplaySample, counter: u64) -> Result<Vec<f32>, RlError> {
        let n = next_obs.len();
        let std = self.config.noise.at(self.env_step);
        let mut g = Graph::new(false);
        let feat = self.backend.encode(&mut g, next_obs)?;
        let mu = self.actor.mean(&mut g, &self.actor_store, feat)?;
        let noise = self.noise("rl/target_noise", counter, n * self.action_dim, std, Some(self.config.noise_clip));
        let a = self.perturbed(&mut g, mu, &noise);
        let (q1, q2) = self.critic.forward(&mut g, &self.critic_target, feat, a)?;
        let (q1, q2) = (&g.value(q1).data, &g.value(q2).data);
        Ok((0..n).map(|i| td_target(sample.rewards[i], sample.discounts[i], q1[i], q2[i])).collect())
    }

    /// Samples a minibatch (stream counter = update index) and updates.
    pub fn update(&mut self, replay: &ReplayBuffer) -> Result<OffPolicyLosses, RlError> {
        let sample = replay.sample(self.config.batch_size, &self.rng.child("rl/replay", 0), self.updates)?;
        self.update_with(&sample)
    }

    /// Critic step (encoder included), actor step on detached features,
    /// then the soft target update.
    pub fn update_with(&mut self, sample: &ReplaySample) -> Result<OffPolicyLosses, RlError> {
        let b = sample.obs.len();
        let u = self.updates;
        let aug = self.rng.child("rl/augment", 0);
        let base = u * 2 * b as u64;
        let c_obs: Vec<u64> = (0..b as u64).map(|i| base + i).collect();
        let c_next: Vec<u64> = (0..b as u64).map(|i| base + b as u64 + i).collect();
        let obs = self.augmenter.apply(&sample.obs, &aug, &c_obs)?;
        let next = self.augmenter.apply(&sample.next_obs, &aug, &c_next)?;
        let y = self.td_targets(&next, sample, u)?;

        let mut g = Graph::new(true);
        let feat = self.backend.encode(&mut g, &obs)?;
        let act = g.input(self.action_tensor(&sample.actions));
        let (q1, q2) = self.critic.forward(&mut g, &self.critic_store, feat, act)?;
        let yv = g.input(Tensor::new(vec![b, 1], y));
        let l1 = g.mse(q1, yv)?;
        let l2 = g.mse(q2, yv)?;
        let critic_loss = g.add(l1, l2)?;
        let cl = g.value(critic_loss).data[0] as f64;
        if !cl.is_finite() {
            return Err(RlError::Numerical(format!("critic loss {cl} at update {u}")));
        }
        let q_mean = g.value(q1).data.iter().map(|&v| v as f64).sum::<f64>() / b as f64;
        let grads = g.backward(critic_loss)?;
        self.critic_opt.step(&mut self.critic_store, &grads);
        self.enc_opt.step(self.backend.store_mut(), &grads);
        let feat_value = g.value(feat).clone();
        drop(g);

        let std = self.config.noise.at(self.env_step);
        let noise = self.noise("rl/actor_noise", u, b * self.action_dim, std, Some(self.config.noise_clip));
        self.critic_store.set_frozen(true);
        let actor_loss = (|| -> Result<(f64, vmc_nn::Gradients<f32>), RlError> {
            let mut g = Graph::new(true);
            let f = g.input(feat_value);
            let mu = self.actor.mean(&mut g, &self.actor_store, f)?;
            let a = self.perturbed(&mut g, mu, &noise);
            let (q1, q2) = self.critic.forward(&mut g, &self.critic_store, f, a)?;
            let q = g.min(q1, q2)?;
            let m = g.mean_all(q);
            let loss = g.scale(m, -1.0);
            let l = g.value(loss).data[0] as f64;
            Ok((l, g.backward(loss)?))
        })();
        self.critic_store.set_frozen(false);
        let (al, grads) = actor_loss?;
        self.actor_opt.step(&mut self.actor_store, &grads);
        self.soft_update_targets();
        self.updates += 1;
        Ok(OffPolicyLosses { critic: cl, actor: al, q_mean })
    }

    pub fn soft_update_targets(&mut self) {
        self.critic_target.soft_update_from(&self.critic_store, self.config.tau);
    }

    /// L2 distance between target and online critics.
    pub fn target_distance(&self) -> f64 {
        self.critic_target.distance(&self.critic_store)
    }

    /// Exchanges the parameters of the two target Q networks.
    pub fn swap_target_critics(&mut self) {
        let ids: Vec<_> = self
            .critic
            .q1
            .layers
            .iter()
            .zip(&self.critic.q2.layers)
            .flat_map(|(a, b)| [(a.weight, b.weight), (a.bias, b.bias)])
            .collect();
        for (a, b) in ids {
            let ta = self.critic_target.get(a).clone();
            let tb = std::mem::replace(self.critic_target.get_mut(b), ta);
            *self.critic_target.get_mut(a) = tb;
        }
    }

    pub(crate) fn save_into(&self, a: &mut Archive<f32>) {
        push_store(a, "encoder/", self.backend.store());
        push_store(a, "actor/", &self.actor_store);
        push_store(a, "critic/", &self.critic_store);
        push_store(a, "critic_target/", &self.critic_target);
        push_adam(a, "opt/encoder/", &self.enc_opt);
        push_adam(a, "opt/actor/", &self.actor_opt);
        push_adam(a, "opt/critic/", &self.critic_opt);
    }

    pub(crate) fn load_from(&mut self, a: &Archive<f32>, updates: u64, env_step: u64) -> Result<(), RlError> {
        restore_store(a, "encoder/", self.backend.store_mut())?;
        restore_store(a, "actor/", &mut self.actor_store)?;
        restore_store(a, "critic/", &mut self.critic_store)?;
        restore_store(a, "critic_target/", &mut self.critic_target)?;
        restore_adam(a, "opt/encoder/", &mut self.enc_opt);
        restore_adam(a, "opt/actor/", &mut self.actor_opt);
        restore_adam(a, "opt/critic/", &mut self.critic_opt);
        self.updates = updates;
        self.env_step = env_step;
        Ok(())
    }
}

impl RolloutAgent for OffPolicyAgent {
    fn frame_stack(&self) -> usize {
        self.config.frame_stack
    }

    fn act(&mut self, obs: &ObservationBatch, _proprio: &[Vec<f32>], keys: &[ActKey]) -> Result<Vec<ActOutput>, RlError> {
        let explore = |k: &ActKey| self.rng.child("rl/explore", k.episode).rng("step", k.step as u64);
        if self.env_step < self.config.seed_steps {
            return Ok(keys
                .iter()
                .map(|k| {
                    let mut r = explore(k);
                    ActOutput::action((0..self.action_dim).map(|_| r.random_range(-1.0f32..=1.0)).collect())
                })
                .collect());
        }
        let std = self.config.noise.at(self.env_step);
        let means = self.mean_actions(obs)?;
        Ok(means
            .into_iter()
            .zip(keys)
            .map(|(m, k)| {
                let mut r = explore(k);
                ActOutput::action(
                    m.iter()
                        .map(|&v| (v as f64 + r.sample::<f64, _>(StandardNormal) * std).clamp(-1.0, 1.0) as f32)
                        .collect(),
                )
            })
            .collect())
    }
}

impl ActingPolicy for OffPolicyAgent {
    fn frame_stack(&self) -> usize {
        self.config.frame_stack
    }

    fn greedy(&self, obs: &ObservationBatch, _proprio: &[Vec<f32>]) -> Result<Vec<Vec<f32>>, RlError> {
        self.mean_actions(obs)
    }
}

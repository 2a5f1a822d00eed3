use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vmc_augment::{Augmenter, DistractorSource};
use vmc_core::{top_k_mean, DemoDataset, MetricKind, MetricSeries, ObservationBatch, RngPolicy};
use vmc_encoders::{cache_features, BackendMode, FeatureCache};
use vmc_envdata::Environment;
use vmc_nn::{Adam, AdamConfig, Graph, Tensor};

use crate::config::{BCConfig, CacheMode, EncoderConfig};
use crate::eval::{eval_seeds, evaluate};
use crate::policy::BcPolicy;
use crate::sweep::demo_order;
use crate::BcError;

const TOP_K: usize = 3;
const PROCEDURAL_DISTRACTORS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BCResult {
    /// Success rate per checkpoint, keyed by epoch.
    pub series: MetricSeries,
    pub top3: f64,
    pub epoch_losses: Vec<f64>,
    pub iterations: u64,
    pub used_cache: bool,
    pub seconds_per_iteration: f64,
    pub eval_seconds_per_episode: f64,
}

impl BCResult {
    /// Equality of everything except wall-clock measurements.
    pub fn same_metrics(&self, other: &BCResult) -> bool {
        self.series == other.series
            && self.top3 == other.top3
            && self.epoch_losses == other.epoch_losses
            && self.iterations == other.iterations
            && self.used_cache == other.used_cache
    }
}

/// Minibatch regression over `(frame stack, action)` pairs of a dataset.
pub struct BcTrainer {
    config: BCConfig,
    policy: BcPolicy,
    data: DemoDataset,
    samples: Vec<(usize, usize)>,
    cache: Option<FeatureCache>,
    augmenter: Augmenter,
    aug_rng: RngPolicy,
    head_opt: Adam<f32>,
    backbone_opt: Option<Adam<f32>>,
    order: Vec<usize>,
    epoch: usize,
    cursor: usize,
    iteration: u64,
}

impl BcTrainer {
    pub fn new(config: &BCConfig, dataset: &DemoDataset) -> Result<Self, BcError> {
        Self::with_cache_dir(config, dataset, None)
    }

    /// Like [`BcTrainer::new`], but feature caches are read from and written
    /// to `cache_dir` when one is given.
    pub fn with_cache_dir(config: &BCConfig, dataset: &DemoDataset, cache_dir: Option<&Path>) -> Result<Self, BcError> {
        config.validate()?;
        let available = dataset.episodes.len();
        let count = config.demo_count.unwrap_or(available);
        if available == 0 || count > available {
            return Err(BcError::InsufficientData { needed: count.max(1), got: available });
        }
        let data = dataset.subset(&demo_order(config.seed, available)[..count]);
        let policy = BcPolicy::new(config, data.frame_shape, data.action_dim)?;
        if config.cache == CacheMode::Auto
            && config.encoder.mode() == BackendMode::Frozen
            && !config.augmentation.is_identity()
        {
            log::warn!("augmentation needs pixel-space forwards; feature caching disabled");
        }
        let cache = match (config.uses_cache(), cache_dir) {
            (false, _) => None,
            (true, None) => Some(cache_features(&policy.backend, &data)?),
            (true, Some(dir)) => Some(disk_cache(&policy, &data, dir)?),
        };
        let root = RngPolicy::new(config.seed);
        let source = if config.augmentation.uses_overlay() {
            let (h, w) = (data.frame_shape.height, data.frame_shape.width);
            Some(match &config.distractor_dir {
                Some(dir) => DistractorSource::from_dir(dir, h, w)?,
                None => DistractorSource::procedural(PROCEDURAL_DISTRACTORS, h, w, &root.child("bc/distractors", 0)),
            })
        } else {
            None
        };
        let augmenter = Augmenter::new(config.augmentation.clone(), source)?;
        let samples = data
            .episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| (0..ep.len()).map(move |t| (e, t)))
            .collect();
        let head_opt = Adam::new(AdamConfig::with_lr(config.lr), &policy.head_store);
        let backbone_opt = matches!(config.encoder.mode(), BackendMode::Trainable | BackendMode::Finetune)
            .then(|| Adam::new(AdamConfig::with_lr(config.backbone_lr.unwrap_or(config.lr)), policy.backend.store()));
        Ok(Self {
            config: config.clone(),
            policy,
            data,
            samples,
            cache,
            augmenter,
            aug_rng: root.child("bc/augment", 0),
            head_opt,
            backbone_opt,
            order: Vec::new(),
            epoch: 0,
            cursor: 0,
            iteration: 0,
        })
    }

    pub fn policy(&self) -> &BcPolicy {
        &self.policy
    }

    pub fn dataset(&self) -> &DemoDataset {
        &self.data
    }

    pub fn uses_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn iterations(&self) -> u64 {
        self.iteration
    }

    /// One optimizer step on the next minibatch of the epoch schedule;
    /// returns the minibatch loss.
    pub fn iteration(&mut self) -> Result<f64, BcError> {
        Ok(self.next_batch()?.0)
    }

    fn next_batch(&mut self) -> Result<(f64, usize), BcError> {
        let n = self.samples.len();
        if self.cursor == 0 {
            self.order = (0..n).collect();
            let mut rng = RngPolicy::new(self.config.seed).rng("bc/shuffle", self.epoch as u64);
            self.order.shuffle(&mut rng);
        }
        let mut end = (self.cursor + self.config.batch_size).min(n);
        if n - end == 1 {
            // a lone trailing sample would leave batch norm without statistics
            end = n;
        }
        let picks: Vec<(usize, usize)> = self.order[self.cursor..end].iter().map(|&i| self.samples[i]).collect();
        let base = (self.epoch * n + self.cursor) as u64;
        let counters: Vec<u64> = (0..picks.len() as u64).map(|j| base + j).collect();
        let loss = self.update(&picks, &counters)?;
        self.iteration += 1;
        if !loss.is_finite() {
            return Err(BcError::NonFinite(self.iteration));
        }
        self.cursor = end;
        if self.cursor == n {
            self.cursor = 0;
            self.epoch += 1;
        }
        Ok((loss, picks.len()))
    }

    /// Runs the rest of the current epoch; returns its sample-weighted loss.
    pub fn train_epoch(&mut self) -> Result<f64, BcError> {
        let start = self.epoch;
        let (mut total, mut count) = (0.0, 0usize);
        while self.epoch == start {
            let (l, b) = self.next_batch()?;
            total += l * b as f64;
            count += b;
        }
        Ok(total / count as f64)
    }

    /// Loss over the whole dataset without updating anything (evaluation
    /// mode, no augmentation).
    pub fn dataset_loss(&self) -> Result<f64, BcError> {
        let mut total = 0.0;
        for chunk in self.samples.chunks(256) {
            let mut g = Graph::new(false);
            let z = self.latents(&mut g, chunk, None)?;
            let a = self.policy.head_from_latents(&mut g, z)?;
            let t = g.input(self.targets(chunk));
            let l = g.mse(a, t)?;
            total += g.value(l).data[0] as f64 * chunk.len() as f64;
        }
        Ok(total / self.samples.len() as f64)
    }

    fn targets(&self, picks: &[(usize, usize)]) -> Tensor<f32> {
        let a = self.data.action_dim;
        let data = picks.iter().flat_map(|&(e, t)| self.data.episodes[e].actions[t].iter().copied()).collect();
        Tensor::new(vec![picks.len(), a], data)
    }

    fn latents(
        &self,
        g: &mut Graph<f32>,
        picks: &[(usize, usize)],
        counters: Option<&[u64]>,
    ) -> Result<vmc_nn::Var, BcError> {
        let depth = self.config.frame_stack;
        if let Some(cache) = &self.cache {
            let mut rows = Vec::with_capacity(picks.len() * depth * cache.dim());
            for &(e, t) in picks {
                cache.stacked(e, t, depth, &mut rows)?;
            }
            return Ok(g.input(Tensor::new(vec![picks.len(), depth * cache.dim()], rows)));
        }
        let stacks: Vec<_> = picks.iter().map(|&(e, t)| self.data.episodes[e].stack_at(t, depth)).collect();
        let mut batch = ObservationBatch::from_frames(&stacks)?;
        if let Some(c) = counters {
            if !self.augmenter.is_identity() {
                batch = self.augmenter.apply(&batch, &self.aug_rng, c)?;
            }
        }
        Ok(self.policy.backend.encode(g, &batch)?)
    }

    fn update(&mut self, picks: &[(usize, usize)], counters: &[u64]) -> Result<f64, BcError> {
        let mut g = Graph::new(true);
        let z = self.latents(&mut g, picks, Some(counters))?;
        let a = self.policy.head_from_latents(&mut g, z)?;
        let t = g.input(self.targets(picks));
        let loss = g.mse(a, t)?;
        let value = g.value(loss).data[0] as f64;
        let grads = g.backward(loss)?;
        self.head_opt.step(&mut self.policy.head_store, &grads);
        if let Some(opt) = &mut self.backbone_opt {
            opt.step(self.policy.backend.store_mut(), &grads);
        }
        self.policy.backend.commit_buffers(&mut g);
        g.commit_buffers(&mut self.policy.head_store);
        Ok(value)
    }
}

/// Content hash of every frame in the dataset, used to key on-disk caches.
fn dataset_hash(data: &DemoDataset) -> String {
    let mut h = Sha256::new();
    for ep in &data.episodes {
        h.update((ep.len() as u64).to_le_bytes());
        for f in &ep.observations {
            h.update(f.pixels());
        }
    }
    hex::encode(&h.finalize()[..12])
}

fn disk_cache(policy: &BcPolicy, data: &DemoDataset, dir: &Path) -> Result<FeatureCache, BcError> {
    let fp = policy.backend.fingerprint();
    let path = dir.join(format!("{}-{}.cache", &fp[..fp.len().min(16)], dataset_hash(data)));
    if path.exists() {
        match FeatureCache::load(&path, &fp) {
            Ok(c) if c.len() == data.num_steps() => {
                log::debug!("feature cache hit {}", path.display());
                return Ok(c);
            }
            Ok(_) => log::warn!("{}: stale feature cache, rebuilding", path.display()),
            Err(e) => log::warn!("{}: {e}; rebuilding", path.display()),
        }
    }
    let cache = cache_features(&policy.backend, data)?;
    std::fs::create_dir_all(dir).map_err(|e| BcError::Config(format!("cache directory {}: {e}", dir.display())))?;
    cache.save(&path)?;
    Ok(cache)
}

/// Trains a BC policy and scores it every `eval_every` epochs on
/// `eval_episodes` fixed seeds. `make_env` builds the evaluation
/// environments; they must match the dataset.
pub fn train_bc<E: Environment>(
    config: &BCConfig,
    dataset: &DemoDataset,
    make_env: &dyn Fn() -> E,
) -> Result<BCResult, BcError> {
    train_bc_cached(config, dataset, make_env, None)
}

/// [`train_bc`] with feature caches kept in `cache_dir`.
pub fn train_bc_cached<E: Environment>(
    config: &BCConfig,
    dataset: &DemoDataset,
    make_env: &dyn Fn() -> E,
    cache_dir: Option<&Path>,
) -> Result<BCResult, BcError> {
    let mut trainer = BcTrainer::with_cache_dir(config, dataset, cache_dir)?;
    let mut envs: Vec<E> = (0..config.eval_episodes).map(|_| make_env()).collect();
    let spec = envs[0].spec();
    if spec.task_id != dataset.task_id || spec.frame != dataset.frame_shape || spec.action_dim != dataset.action_dim {
        return Err(BcError::Config(format!(
            "environment {} ({:?}, {} actions) does not match dataset {} ({:?}, {} actions)",
            spec.task_id, spec.frame, spec.action_dim, dataset.task_id, dataset.frame_shape, dataset.action_dim
        )));
    }
    let seeds = eval_seeds(config.seed, config.eval_episodes);
    let mut series = MetricSeries::new(MetricKind::SuccessRate);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let (mut train_s, mut eval_s) = (0.0, 0.0);
    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        epoch_losses.push(trainer.train_epoch()?);
        train_s += t0.elapsed().as_secs_f64();
        if epoch % config.eval_every == 0 {
            let t0 = Instant::now();
            let stats = evaluate(trainer.policy(), &mut envs, &seeds)?;
            eval_s += t0.elapsed().as_secs_f64();
            series.push(epoch as u64, stats.success_rate)?;
            log::debug!("bc seed {} epoch {epoch}: loss {:.5} success {:.3}", config.seed, epoch_losses[epoch - 1], stats.success_rate);
        }
    }
    let scores = series.scores();
    let top3 = top_k_mean(&scores, TOP_K.min(scores.len()))?;
    let evaluated = (series.len() * config.eval_episodes).max(1);
    Ok(BCResult {
        series,
        top3,
        epoch_losses,
        iterations: trainer.iterations(),
        used_cache: trainer.uses_cache(),
        seconds_per_iteration: train_s / trainer.iterations().max(1) as f64,
        eval_seconds_per_episode: eval_s / evaluated as f64,
    })
}

/// [`train_bc`] for a pre-trained backbone whose weights are updated too.
pub fn finetune_pretrained<E: Environment>(
    config: &BCConfig,
    dataset: &DemoDataset,
    make_env: &dyn Fn() -> E,
) -> Result<BCResult, BcError> {
    match &config.encoder {
        EncoderConfig::Pretrained { mode: BackendMode::Finetune, .. } => train_bc(config, dataset, make_env),
        other => Err(BcError::Config(format!("finetuning needs a pre-trained backbone in finetune mode, got {other:?}"))),
    }
}

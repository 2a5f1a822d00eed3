use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vmc_augment::{AugmentationSpec, JitterParams};
use vmc_encoders::{BackendMode, MOCK_PRETRAINED};
use vmc_envdata::ReachConfig;
use vmc_imitation::{BCConfig, CacheMode, EncoderConfig};
use vmc_rl::{OffPolicyConfig, OnPolicyConfig, RlEncoder, TrainBudget};

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    Lfs,
    LfsAug,
    LfsAugJitter,
    LfsAugOverlay,
    PretrainedFrozen,
    PretrainedFinetune,
    PretrainedFinetuneAug,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Lfs,
        Method::LfsAug,
        Method::LfsAugJitter,
        Method::LfsAugOverlay,
        Method::PretrainedFrozen,
        Method::PretrainedFinetune,
        Method::PretrainedFinetuneAug,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lfs => "lfs",
            Method::LfsAug => "lfs_aug",
            Method::LfsAugJitter => "lfs_aug_jitter",
            Method::LfsAugOverlay => "lfs_aug_overlay",
            Method::PretrainedFrozen => "pretrained_frozen",
            Method::PretrainedFinetune => "pretrained_finetune",
            Method::PretrainedFinetuneAug => "pretrained_finetune_aug",
        }
    }

    pub fn is_pretrained(self) -> bool {
        matches!(self, Method::PretrainedFrozen | Method::PretrainedFinetune | Method::PretrainedFinetuneAug)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bc,
    Offpolicy,
    Onpolicy,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bc => "bc",
            Algorithm::Offpolicy => "offpolicy",
            Algorithm::Onpolicy => "onpolicy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub count: usize,
    pub seed: u64,
    /// Per-axis speed limit of the scripted expert.
    pub max_speed: f32,
    /// Load demonstrations from here instead of generating them.
    pub dir: Option<PathBuf>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { count: 100, seed: 1, max_speed: 0.1, dir: None }
    }
}

/// Augmentation strengths used by the methods that augment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub shift_pad: usize,
    pub jitter: JitterParams,
    pub overlay_alpha: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { shift_pad: 2, jitter: JitterParams::default(), overlay_alpha: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainedConfig {
    pub name: String,
    pub weights: Option<PathBuf>,
    /// Input resolution of the backbone; frames are resized to it.
    pub native: usize,
}

impl Default for PretrainedConfig {
    fn default() -> Self {
        Self { name: MOCK_PRETRAINED.into(), weights: None, native: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlRunConfig {
    pub budget: TrainBudget,
    /// Episodes used to estimate the random and expert returns that anchor
    /// the normalized return.
    pub reference_episodes: usize,
    /// Save a trainer checkpoint per seed at the end of training.
    pub save_checkpoints: bool,
}

impl Default for RlRunConfig {
    fn default() -> Self {
        Self {
            budget: TrainBudget { total_steps: 50_000, eval_every: 2_500, eval_episodes: 20, target: None },
            reference_episodes: 20,
            save_checkpoints: false,
        }
    }
}

/// Colour perturbation applied to BC evaluation environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub magnitude: f32,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { magnitude: 0.2, seed: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub methods: Vec<Method>,
    pub perturbation: PerturbationConfig,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Lfs, Method::LfsAug, Method::LfsAugJitter],
            perturbation: PerturbationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub counts: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { counts: vec![10, 25, 50, 100] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalltimeConfig {
    pub warmup: usize,
    pub iterations: usize,
    /// Environment steps per timed RL iteration.
    pub rl_chunk: u64,
}

impl Default for WalltimeConfig {
    fn default() -> Self {
        Self { warmup: 3, iterations: 10, rl_chunk: 250 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    pub algorithm: Algorithm,
    pub task: ReachConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Seeds trained concurrently.
    pub workers: usize,
    pub demos: DemoConfig,
    pub augment: AugmentConfig,
    pub pretrained: PretrainedConfig,
    /// Template for BC runs; the method fills in encoder and augmentation.
    pub bc: BCConfig,
    pub offpolicy: OffPolicyConfig,
    pub onpolicy: OnPolicyConfig,
    pub rl: RlRunConfig,
    /// When set, BC policies are scored on colour-perturbed environments.
    pub eval_perturbation: Option<PerturbationConfig>,
    pub robustness: RobustnessConfig,
    pub sweep: SweepConfig,
    pub walltime: WalltimeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            method: Method::LfsAug,
            algorithm: Algorithm::Bc,
            task: ReachConfig::preset(32),
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs"),
            workers: 1,
            demos: DemoConfig::default(),
            augment: AugmentConfig::default(),
            pretrained: PretrainedConfig::default(),
            bc: BCConfig { eval_episodes: 50, ..BCConfig::desk_scale(0) },
            offpolicy: OffPolicyConfig::desk_scale(0),
            onpolicy: OnPolicyConfig::desk_scale(0),
            rl: RlRunConfig::default(),
            eval_perturbation: None,
            robustness: RobustnessConfig::default(),
            sweep: SweepConfig::default(),
            walltime: WalltimeConfig::default(),
        }
    }
}

fn config_err(m: impl Into<String>) -> BenchError {
    BenchError::Config(m.into())
}

impl ExperimentConfig {
    /// Checks the method/algorithm combination and every sub-configuration
    /// an experiment of this kind will use.
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.seeds.is_empty() {
            return Err(config_err("at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err("seeds must be distinct"));
        }
        if self.workers == 0 {
            return Err(config_err("workers must be positive"));
        }
        if self.task.resolution == 0 || self.task.horizon == 0 {
            return Err(config_err("task resolution and horizon must be positive"));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(config_err(format!("experiment name `{}` must be a plain file name", self.name)));
        }
        match self.algorithm {
            Algorithm::Bc => {
                if self.demos.count == 0 && self.demos.dir.is_none() {
                    return Err(config_err("need at least one demonstration"));
                }
                if self.bc.demo_count.is_some_and(|k| self.demos.dir.is_none() && k > self.demos.count) {
                    return Err(config_err("bc.demo_count exceeds demos.count"));
                }
                self.bc_config(self.seeds[0])?.validate().map_err(|e| config_err(e.to_string()))?;
            }
            Algorithm::Offpolicy => {
                self.rl_common_checks()?;
                self.offpolicy_config(self.seeds[0])?.validate().map_err(|e| config_err(e.to_string()))?;
            }
            Algorithm::Onpolicy => {
                self.rl_common_checks()?;
                self.onpolicy_config(self.seeds[0])?.validate().map_err(|e| config_err(e.to_string()))?;
            }
        }
        if self.walltime.warmup < 3 || self.walltime.iterations < 10 || self.walltime.rl_chunk == 0 {
            return Err(config_err("wall-time runs need >= 3 warm-up and >= 10 timed iterations"));
        }
        Ok(())
    }

    fn rl_common_checks(&self) -> Result<(), BenchError> {
        if self.eval_perturbation.is_some() {
            return Err(config_err("evaluation perturbations are only supported for bc"));
        }
        if self.rl.reference_episodes == 0 || self.rl.budget.eval_every == 0 || self.rl.budget.eval_episodes == 0 {
            return Err(config_err("rl reference episodes, eval interval and eval episodes must be positive"));
        }
        Ok(())
    }

    fn bc_augmentation(&self) -> AugmentationSpec {
        let shift = AugmentationSpec::shift(self.augment.shift_pad);
        match self.method {
            Method::Lfs | Method::PretrainedFrozen | Method::PretrainedFinetune => AugmentationSpec::none(),
            Method::LfsAug | Method::PretrainedFinetuneAug => shift,
            Method::LfsAugJitter => AugmentationSpec::composite(vec![shift, AugmentationSpec::jitter(self.augment.jitter)]),
            Method::LfsAugOverlay => {
                AugmentationSpec::composite(vec![shift, AugmentationSpec::overlay(self.augment.overlay_alpha)])
            }
        }
    }

    /// The BC configuration for one seed.
    pub fn bc_config(&self, seed: u64) -> Result<BCConfig, BenchError> {
        if !self.bc.augmentation.is_identity() {
            return Err(config_err("bc.augmentation is chosen by the method; leave it unset"));
        }
        let encoder = match (self.method, &self.bc.encoder) {
            (m, EncoderConfig::Scratch { .. }) if !m.is_pretrained() => self.bc.encoder.clone(),
            (m, EncoderConfig::Pretrained { .. }) if !m.is_pretrained() => {
                return Err(config_err(format!("method {} trains from scratch but bc.encoder is pre-trained", m.name())))
            }
            (m, _) => EncoderConfig::Pretrained {
                name: self.pretrained.name.clone(),
                weights: self.pretrained.weights.clone(),
                mode: if m == Method::PretrainedFrozen { BackendMode::Frozen } else { BackendMode::Finetune },
                native: self.pretrained.native,
            },
        };
        if self.bc.cache == CacheMode::Force && self.method != Method::PretrainedFrozen {
            return Err(config_err(format!("feature caching needs pretrained_frozen, not {}", self.method.name())));
        }
        Ok(BCConfig { encoder, augmentation: self.bc_augmentation(), seed, ..self.bc.clone() })
    }

    fn rl_parts(&self, shift_pad: usize) -> Result<(Option<RlEncoder>, usize), BenchError> {
        match self.method {
            Method::Lfs => Ok((None, 0)),
            Method::LfsAug if shift_pad > 0 => Ok((None, shift_pad)),
            Method::LfsAug => Err(config_err("lfs_aug needs a positive shift_pad in the rl sub-config")),
            Method::PretrainedFrozen => Ok((
                Some(RlEncoder::Pretrained {
                    name: self.pretrained.name.clone(),
                    weights: self.pretrained.weights.clone(),
                    native: self.pretrained.native,
                }),
                0,
            )),
            m => Err(config_err(format!("method {} is not available for {}", m.name(), self.algorithm.name()))),
        }
    }

    pub fn offpolicy_config(&self, seed: u64) -> Result<OffPolicyConfig, BenchError> {
        let (encoder, shift_pad) = self.rl_parts(self.offpolicy.shift_pad)?;
        Ok(OffPolicyConfig {
            encoder: encoder.unwrap_or_else(|| self.offpolicy.encoder.clone()),
            shift_pad,
            seed,
            ..self.offpolicy.clone()
        })
    }

    pub fn onpolicy_config(&self, seed: u64) -> Result<OnPolicyConfig, BenchError> {
        let (encoder, shift_pad) = self.rl_parts(self.onpolicy.shift_pad)?;
        Ok(OnPolicyConfig {
            encoder: encoder.unwrap_or_else(|| self.onpolicy.encoder.clone()),
            shift_pad,
            seed,
            ..self.onpolicy.clone()
        })
    }

    /// Hash of every field that can change results, plus the crate version.
    /// Seeds, workers, the output location and the sub-configurations the
    /// algorithm does not use are left out.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is a table");
        for key in ["name", "seeds", "output_dir", "workers", "robustness", "sweep", "walltime"] {
            obj.remove(key);
        }
        let unused: &[&str] = match self.algorithm {
            Algorithm::Bc => &["offpolicy", "onpolicy", "rl"],
            Algorithm::Offpolicy => &["bc", "onpolicy", "demos", "augment", "eval_perturbation"],
            Algorithm::Onpolicy => &["bc", "offpolicy", "demos", "augment", "eval_perturbation"],
        };
        for key in unused {
            obj.remove(*key);
        }
        let mut h = Sha256::new();
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        h.update([0]);
        h.update(serde_json::to_string(&v).expect("json").as_bytes());
        hex::encode(h.finalize())
    }

    /// Fingerprint of one seed's run.
    pub fn seed_key(&self, seed: u64) -> String {
        format!("{}-{seed}", &self.fingerprint()[..16])
    }

    /// Run directory: `<output_dir>/<name>-<fingerprint prefix>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("{}-{}", self.name, &self.fingerprint()[..12]))
    }

    pub fn to_toml(&self) -> Result<String, BenchError> {
        toml::to_string_pretty(self).map_err(|e| BenchError::Format(e.to_string()))
    }
}

/// Shipped preset files, one per experiment family.
pub const PRESETS: &[(&str, &str)] = &[
    ("bc", include_str!("../presets/bc.toml")),
    ("bc-robustness", include_str!("../presets/bc-robustness.toml")),
    ("bc-finetune", include_str!("../presets/bc-finetune.toml")),
    ("bc-walltime", include_str!("../presets/bc-walltime.toml")),
    ("offpolicy", include_str!("../presets/offpolicy.toml")),
    ("onpolicy", include_str!("../presets/onpolicy.toml")),
];

pub fn preset(name: &str) -> Result<&'static str, BenchError> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        config_err(format!("unknown preset `{name}`; available: {}", names.join(", ")))
    })
}

/// Builds a configuration from layered sources: defaults, then an optional
/// preset, then an optional file, then `KEY=VALUE` overrides with dotted
/// keys. Later layers replace individual keys of earlier ones.
#[derive(Debug, Default, Clone)]
pub struct ConfigLoader {
    layers: Vec<toml::Table>,
}

impl ConfigLoader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn preset(self, name: &str) -> Result<Self, BenchError> {
        self.text(preset(name)?)
    }

    pub fn file(self, path: &std::path::Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        self.text(&text)
    }

    pub fn text(mut self, text: &str) -> Result<Self, BenchError> {
        self.layers.push(text.parse::<toml::Table>().map_err(|e| config_err(format!("config syntax: {e}")))?);
        Ok(self)
    }

    pub fn set(mut self, assignment: &str) -> Result<Self, BenchError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| config_err(format!("override `{assignment}` is not KEY=VALUE")))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(config_err(format!("override key `{key}` is malformed")));
        }
        let value = parse_value(raw.trim());
        let mut table = toml::Table::new();
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("non-empty key");
        let leaf = parts.iter().rev().fold(
            {
                let mut t = toml::Table::new();
                t.insert(last.to_string(), value);
                t
            },
            |inner, part| {
                let mut t = toml::Table::new();
                t.insert(part.to_string(), toml::Value::Table(inner));
                t
            },
        );
        table.extend(leaf);
        self.layers.push(table);
        Ok(self)
    }

    pub fn build(self) -> Result<ExperimentConfig, BenchError> {
        let mut merged = toml::Table::try_from(ExperimentConfig::default()).map_err(|e| BenchError::Format(e.to_string()))?;
        for layer in self.layers {
            merge(&mut merged, layer);
        }
        toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(l)) if !is_tagged(&l) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Tables carrying a `source` or `kind` tag replace the whole value, so a
/// variant switch does not inherit fields of the previous variant.
fn is_tagged(t: &toml::Table) -> bool {
    t.contains_key("source") || t.contains_key("kind")
}

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use vmc_core::{aggregate_ci, top_k_mean, Aggregate, DemoDataset, MetricSeries, RngPolicy};
use vmc_imitation::{train_bc_cached, BCResult};
use vmc_rl::{OffPolicyTrainer, OnPolicyTrainer, ReturnBounds, RlResult};

use crate::config::{Algorithm, ExperimentConfig};
use crate::tasks::{load_or_generate_demos, make_task, perturbed_task, reference_bounds_for};
use crate::walltime::WalltimeTable;
use crate::BenchError;

pub const AGGREGATE_LEVEL: f64 = 0.95;
/// Bootstrap stream of report aggregates, fixed so they can be recomputed
/// from the persisted per-seed values.
pub const AGGREGATE_SEED: u64 = 0xa661_u64;
const TOP_K: usize = 3;
const CACHE_ENV: &str = "VMC_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    /// Config fingerprint prefix plus seed; completed seeds are matched on it.
    pub key: String,
    pub series: MetricSeries,
    /// Mean of the three best checkpoint scores.
    pub top3: f64,
    pub final_score: f64,
    pub details: BTreeMap<String, f64>,
    pub curves: BTreeMap<String, Vec<(u64, f64)>>,
    /// Wall-clock measurements, ignored by [`SeedRecord::same_metrics`].
    pub timing: BTreeMap<String, f64>,
}

impl SeedRecord {
    pub fn from_series(config: &ExperimentConfig, seed: u64, series: MetricSeries) -> Result<Self, BenchError> {
        let scores = series.scores();
        let Some(final_score) = series.last_score() else {
            return Err(BenchError::Empty(format!("seed {seed} produced no checkpoint scores")));
        };
        let top3 = top_k_mean(&scores, TOP_K.min(scores.len()))?;
        Ok(Self {
            seed,
            key: config.seed_key(seed),
            final_score,
            top3,
            series,
            details: BTreeMap::new(),
            curves: BTreeMap::new(),
            timing: BTreeMap::new(),
        })
    }

    fn from_bc(config: &ExperimentConfig, seed: u64, r: BCResult) -> Result<Self, BenchError> {
        let mut rec = Self::from_series(config, seed, r.series)?;
        rec.top3 = r.top3;
        rec.details.insert("iterations".into(), r.iterations as f64);
        rec.details.insert("used_cache".into(), if r.used_cache { 1.0 } else { 0.0 });
        rec.curves.insert("epoch_loss".into(), r.epoch_losses.iter().enumerate().map(|(i, &l)| (i as u64 + 1, l)).collect());
        rec.timing.insert("train_seconds_per_iteration".into(), r.seconds_per_iteration);
        rec.timing.insert("inference_seconds_per_episode".into(), r.eval_seconds_per_episode);
        Ok(rec)
    }

    fn from_rl(config: &ExperimentConfig, seed: u64, r: RlResult) -> Result<Self, BenchError> {
        let mut rec = Self::from_series(config, seed, r.series)?;
        rec.details.insert("env_steps".into(), r.env_steps as f64);
        rec.details.insert("updates".into(), r.updates as f64);
        if let Some(at) = r.reached {
            rec.details.insert("reached_at".into(), at as f64);
        }
        rec.curves.insert("raw_return".into(), r.raw_returns);
        rec.curves.insert("success_rate".into(), r.success_rates);
        rec.timing.insert("train_seconds".into(), r.seconds);
        Ok(rec)
    }

    pub fn same_metrics(&self, other: &SeedRecord) -> bool {
        let a = (&self.key, &self.series, &self.details, &self.curves);
        a == (&other.key, &other.series, &other.details, &other.curves)
            && self.seed == other.seed
            && self.top3.to_bits() == other.top3.to_bits()
            && self.final_score.to_bits() == other.final_score.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub fingerprint: String,
    pub version: String,
    pub config: ExperimentConfig,
    /// Successful seeds, in configuration order.
    pub records: Vec<SeedRecord>,
    pub failures: Vec<SeedFailure>,
    /// Set when any seed failed.
    pub partial: bool,
    /// Mean and bootstrap interval of the per-seed top-3 scores.
    pub aggregate: Option<Aggregate>,
    pub walltime: Option<WalltimeTable>,
    pub created_unix: u64,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig, records: Vec<SeedRecord>, failures: Vec<SeedFailure>) -> Result<Self, BenchError> {
        Ok(Self {
            name: config.name.clone(),
            fingerprint: config.fingerprint(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            aggregate: aggregate_records(&records)?,
            partial: !failures.is_empty(),
            records,
            failures,
            walltime: None,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    /// Equality of results, ignoring timestamps, wall-clock numbers and
    /// settings outside the fingerprint such as the worker count.
    pub fn same_metrics(&self, other: &ExperimentReport) -> bool {
        (&self.name, &self.fingerprint, &self.failures, self.partial, &self.aggregate)
            == (&other.name, &other.fingerprint, &other.failures, other.partial, &other.aggregate)
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.same_metrics(b))
    }

    pub fn top3_scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.top3).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        write_json(path, self)
    }
}

pub fn load_report(path: &Path) -> Result<ExperimentReport, BenchError> {
    read_json(path)
}

/// Aggregate of the per-seed top-3 scores. A single seed yields a
/// degenerate interval at its own value.
pub fn aggregate_records(records: &[SeedRecord]) -> Result<Option<Aggregate>, BenchError> {
    let values: Vec<f64> = records.iter().map(|r| r.top3).collect();
    Ok(match values.len() {
        0 => None,
        1 => Some(Aggregate { mean: values[0], lo: values[0], hi: values[0] }),
        _ => Some(aggregate_ci(&values, AGGREGATE_LEVEL, &RngPolicy::new(AGGREGATE_SEED))?),
    })
}

/// Unweighted mean over tasks of each task's mean score. Scores are
/// expected to be normalized per task already.
pub fn aggregate_across_tasks(reports: &[ExperimentReport]) -> Option<f64> {
    let means: Vec<f64> = reports.iter().filter_map(|r| r.aggregate.map(|a| a.mean)).collect();
    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
}

/// Trains one seed of an experiment.
pub trait SeedRunner: Sync {
    fn run(&self, config: &ExperimentConfig, seed: u64) -> Result<SeedRecord, BenchError>;
}

impl<F> SeedRunner for F
where
    F: Fn(&ExperimentConfig, u64) -> Result<SeedRecord, BenchError> + Sync,
{
    fn run(&self, config: &ExperimentConfig, seed: u64) -> Result<SeedRecord, BenchError> {
        self(config, seed)
    }
}

/// The runner behind [`run_experiment`]: demonstrations and reference
/// returns are prepared once and shared by all seeds.
pub struct Trainer {
    demos: Option<DemoDataset>,
    bounds: Option<ReturnBounds>,
    cache_dir: Option<PathBuf>,
    checkpoint_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn prepare(config: &ExperimentConfig, cache_dir: Option<PathBuf>) -> Result<Self, BenchError> {
        config.validate()?;
        let (demos, bounds) = match config.algorithm {
            Algorithm::Bc => (Some(load_or_generate_demos(config)?), None),
            _ => (None, Some(reference_bounds_for(config)?)),
        };
        let checkpoint_dir = config.rl.save_checkpoints.then(|| config.run_dir().join("checkpoints"));
        Ok(Self { demos, bounds, cache_dir, checkpoint_dir })
    }

    pub fn demos(&self) -> Option<&DemoDataset> {
        self.demos.as_ref()
    }

    pub fn bounds(&self) -> Option<ReturnBounds> {
        self.bounds
    }

    fn checkpoint_path(&self, seed: u64) -> Result<Option<PathBuf>, BenchError> {
        match &self.checkpoint_dir {
            None => Ok(None),
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| BenchError::io(d, e))?;
                Ok(Some(d.join(format!("seed-{seed}.ckpt"))))
            }
        }
    }
}

impl SeedRunner for Trainer {
    fn run(&self, config: &ExperimentConfig, seed: u64) -> Result<SeedRecord, BenchError> {
        let make = || make_task(config);
        match config.algorithm {
            Algorithm::Bc => {
                let cfg = config.bc_config(seed)?;
                let demos = self.demos.as_ref().expect("prepared for bc");
                let cache = self.cache_dir.as_deref();
                let r = match &config.eval_perturbation {
                    None => train_bc_cached(&cfg, demos, &make, cache)?,
                    Some(p) => {
                        perturbed_task(config, p)?;
                        let wrapped = || perturbed_task(config, p).expect("perturbation validated");
                        train_bc_cached(&cfg, demos, &wrapped, cache)?
                    }
                };
                SeedRecord::from_bc(config, seed, r)
            }
            Algorithm::Offpolicy => {
                let bounds = self.bounds.expect("prepared for rl");
                let mut t = OffPolicyTrainer::new(config.offpolicy_config(seed)?, config.rl.budget, bounds, &make)?;
                let r = t.run()?;
                if let Some(p) = self.checkpoint_path(seed)? {
                    t.save_checkpoint(&p)?;
                }
                SeedRecord::from_rl(config, seed, r)
            }
            Algorithm::Onpolicy => {
                let bounds = self.bounds.expect("prepared for rl");
                let mut t = OnPolicyTrainer::new(config.onpolicy_config(seed)?, config.rl.budget, bounds, &make)?;
                let r = t.run()?;
                if let Some(p) = self.checkpoint_path(seed)? {
                    t.save_checkpoint(&p)?;
                }
                SeedRecord::from_rl(config, seed, r)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Reuse persisted records of completed seeds with the same fingerprint.
    pub resume: bool,
    /// Write per-seed records and the report under the run directory.
    pub persist: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { resume: true, persist: true }
    }
}

/// Validates `config`, then trains every seed with the built-in trainer.
/// Feature caches go to `$VMC_CACHE_DIR` when it is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, BenchError> {
    run_experiment_with(config, &RunOptions::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentReport, BenchError> {
    config.validate()?;
    if options.persist {
        ensure_writable(&config.run_dir())?;
    }
    let cache_dir = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let trainer = Trainer::prepare(config, cache_dir)?;
    run_seeds(config, &trainer, options)
}

fn seed_path(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.run_dir().join("seeds").join(format!("seed-{seed}.json"))
}

/// Fans the seeds of `config` out to `config.workers` threads. Each worker
/// owns its trainer; the calling thread is the only writer of results. The
/// report does not depend on the number of workers.
pub fn run_seeds(config: &ExperimentConfig, runner: &dyn SeedRunner, options: &RunOptions) -> Result<ExperimentReport, BenchError> {
    config.validate()?;
    let run_dir = config.run_dir();
    if options.persist {
        ensure_writable(&run_dir.join("seeds"))?;
    }
    let mut done: HashMap<u64, SeedRecord> = HashMap::new();
    if options.resume && options.persist {
        for &seed in &config.seeds {
            let p = seed_path(config, seed);
            if p.exists() {
                match read_json::<SeedRecord>(&p) {
                    Ok(r) if r.key == config.seed_key(seed) => {
                        log::info!("seed {seed}: reusing {}", p.display());
                        done.insert(seed, r);
                    }
                    Ok(_) => log::warn!("{}: written by a different configuration, rerunning", p.display()),
                    Err(e) => log::warn!("{e}; rerunning seed {seed}"),
                }
            }
        }
    }
    let pending: Vec<u64> = config.seeds.iter().copied().filter(|s| !done.contains_key(s)).collect();
    let mut failed: HashMap<u64, String> = HashMap::new();
    let workers = config.workers.min(pending.len()).max(1);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(u64, Result<SeedRecord, String>)>();
    std::thread::scope(|scope| -> Result<(), BenchError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = pending.get(i) else { break };
                let out = match catch_unwind(AssertUnwindSafe(|| runner.run(config, seed))) {
                    Ok(r) => r.map_err(|e| e.to_string()),
                    Err(p) => Err(panic_message(p)),
                };
                if tx.send((seed, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (seed, out) in rx {
            match out {
                Ok(rec) => {
                    if options.persist {
                        write_json(&seed_path(config, seed), &rec)?;
                    }
                    log::info!("seed {seed}: top3 {:.4}", rec.top3);
                    done.insert(seed, rec);
                }
                Err(e) => {
                    log::error!("seed {seed} failed: {e}");
                    failed.insert(seed, e);
                }
            }
        }
        Ok(())
    })?;
    let records: Vec<SeedRecord> = config.seeds.iter().filter_map(|s| done.remove(s)).collect();
    let failures: Vec<SeedFailure> =
        config.seeds.iter().filter_map(|s| failed.remove(s).map(|error| SeedFailure { seed: *s, error })).collect();
    let report = ExperimentReport::new(config, records, failures)?;
    if options.persist {
        report.save(&run_dir.join("report.json"))?;
    }
    Ok(report)
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    let msg = p
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    format!("panicked: {msg}")
}

/// Creates `dir` and checks a file can be written there.
pub(crate) fn ensure_writable(dir: &Path) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let probe = dir.join(".write-check");
    std::fs::write(&probe, b"").map_err(|e| BenchError::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| BenchError::io(&probe, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| BenchError::Format(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| BenchError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| BenchError::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| BenchError::Format(format!("{}: {e}", path.display())))
}

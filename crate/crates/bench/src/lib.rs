//! Experiment orchestration for the visual motor control stack.
//!
//! An [`ExperimentConfig`] names a method (how the visual encoder is
//! obtained and augmented), an algorithm (behavior cloning, off-policy or
//! on-policy RL), a task and a list of seeds. [`run_experiment`] trains one
//! run per seed, persists each seed's record as soon as it finishes, and
//! aggregates the per-seed scores into an [`ExperimentReport`].
//! [`measure_walltime`] profiles training and inference cost, and
//! [`emit_outputs`] writes metric records, a summary table and plots.

mod config;
mod experiment;
mod outputs;
mod tasks;
mod walltime;

pub use config::{
    preset, Algorithm, AugmentConfig, ConfigLoader, DemoConfig, ExperimentConfig, Method, PerturbationConfig,
    PretrainedConfig, RlRunConfig, RobustnessConfig, SweepConfig, WalltimeConfig, PRESETS,
};
pub use experiment::{
    aggregate_across_tasks, aggregate_records, load_report, run_experiment, run_experiment_with, run_seeds, ExperimentReport,
    RunOptions, SeedFailure, SeedRecord, SeedRunner, Trainer, AGGREGATE_LEVEL, AGGREGATE_SEED,
};
pub use outputs::{emit_outputs, plot_report, read_summary, OutputFormat, PlotStyle, SummaryRow};
pub use tasks::{load_or_generate_demos, make_task, perturbed_task, reference_bounds_for};
pub use walltime::{measure_walltime, median, time_op, Timing, WalltimeTable};

use std::path::{Path, PathBuf};

use vmc_core::CoreError;
use vmc_envdata::EnvError;
use vmc_imitation::BcError;
use vmc_rl::RlError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("nothing to plot: {0}")]
    Empty(String),
    #[error("all {0} seeds failed")]
    AllSeedsFailed(usize),
    #[error(transparent)]
    Bc(#[from] BcError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl BenchError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io { path: path.to_path_buf(), source }
    }

    /// Whether the error stems from the configuration rather than from
    /// running it.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            BenchError::Config(_) | BenchError::Bc(BcError::Config(_)) | BenchError::Rl(RlError::Config(_))
        )
    }
}

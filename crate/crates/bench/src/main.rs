use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vmc_bench::{
    emit_outputs, load_or_generate_demos, load_report, make_task, measure_walltime, plot_report, reference_bounds_for,
    run_experiment, Algorithm, BenchError, ConfigLoader, ExperimentConfig, ExperimentReport, OutputFormat, PlotStyle,
};
use vmc_core::RngPolicy;
use vmc_envdata::save_demos;
use vmc_rl::{evaluate_returns, Checkpoint, OffPolicyTrainer, OnPolicyTrainer, TrainBudget};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "vmc", version, about = "Train and benchmark visual motor control policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Built-in preset applied before `--config`.
    #[arg(long)]
    preset: Option<String>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted `KEY=VALUE` override, applied last; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated seeds, replacing the configured ones.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output root, replacing `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self, default_preset: Option<&str>) -> Result<ExperimentConfig, BenchError> {
        let mut loader = ConfigLoader::new();
        if let Some(p) = self.preset.as_deref().or(default_preset) {
            loader = loader.preset(p)?;
        }
        if let Some(path) = &self.config {
            loader = loader.file(path)?;
        }
        for o in &self.overrides {
            loader = loader.set(o)?;
        }
        let mut config = loader.build()?;
        if !self.seed.is_empty() {
            config.seeds = self.seed.clone();
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the scripted expert and write a demonstration archive.
    GenDemos {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Archive directory.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Behavior cloning over every configured seed.
    TrainBc {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Off- or on-policy RL over every configured seed; saves final checkpoints.
    TrainRl {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score an RL checkpoint on fresh episodes.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
    },
    /// BC under colour perturbations for each configured method.
    Robustness {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// BC score as a function of the number of demonstrations.
    SweepDemos {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Median training and inference wall-time of the configured method.
    BenchWalltime {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Timed iterations, overriding `walltime.iterations`.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Redraw plots from saved reports.
    Plot {
        /// `report.json` files, drawn together.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        style_seed: u64,
    },
    /// Print the resolved configuration and its fingerprint.
    DescribeConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

enum Outcome {
    Done,
    Partial,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}

fn require_algorithm(config: &ExperimentConfig, allowed: &[Algorithm]) -> Result<(), BenchError> {
    if allowed.contains(&config.algorithm) {
        Ok(())
    } else {
        Err(BenchError::Config(format!("this command does not run algorithm `{}`", config.algorithm.name())))
    }
}

fn dispatch(command: Command) -> Result<Outcome, BenchError> {
    match command {
        Command::GenDemos { cfg, dir } => {
            let config = cfg.load(Some("bc"))?;
            let demos = load_or_generate_demos(&config)?;
            save_demos(&demos, &dir)?;
            println!("wrote {} episodes ({} steps) to {}", demos.episodes.len(), demos.num_steps(), dir.display());
            Ok(Outcome::Done)
        }
        Command::TrainBc { cfg } => {
            let config = cfg.load(Some("bc"))?;
            require_algorithm(&config, &[Algorithm::Bc])?;
            run_and_report(&config)
        }
        Command::TrainRl { cfg } => {
            let mut config = cfg.load(Some("offpolicy"))?;
            require_algorithm(&config, &[Algorithm::Offpolicy, Algorithm::Onpolicy])?;
            config.rl.save_checkpoints = true;
            run_and_report(&config)
        }
        Command::Eval { cfg, checkpoint, episodes } => {
            let config = cfg.load(Some("offpolicy"))?;
            eval_checkpoint(&config, &checkpoint, episodes)
        }
        Command::Robustness { cfg } => {
            let base = cfg.load(Some("bc-robustness"))?;
            require_algorithm(&base, &[Algorithm::Bc])?;
            let configs: Vec<ExperimentConfig> = base
                .robustness
                .methods
                .iter()
                .map(|&m| {
                    let mut c = base.clone();
                    c.method = m;
                    c.name = format!("{}-{}", base.name, m.name());
                    c.eval_perturbation = Some(base.robustness.perturbation.clone());
                    c
                })
                .collect();
            run_group(&base, configs)
        }
        Command::SweepDemos { cfg } => {
            let base = cfg.load(Some("bc"))?;
            require_algorithm(&base, &[Algorithm::Bc])?;
            let configs: Vec<ExperimentConfig> = base
                .sweep
                .counts
                .iter()
                .map(|&k| {
                    let mut c = base.clone();
                    c.bc.demo_count = Some(k);
                    c.name = format!("{}-demos{k}", base.name);
                    c
                })
                .collect();
            run_group(&base, configs)
        }
        Command::BenchWalltime { cfg, iterations } => {
            let config = cfg.load(Some("bc-walltime"))?;
            let table = measure_walltime(&config, iterations.unwrap_or(config.walltime.iterations))?;
            let dir = config.run_dir();
            std::fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
            let path = dir.join("walltime.json");
            let text = serde_json::to_string_pretty(&table).map_err(|e| BenchError::Format(e.to_string()))?;
            std::fs::write(&path, &text).map_err(|e| BenchError::io(&path, e))?;
            println!("{text}");
            Ok(Outcome::Done)
        }
        Command::Plot { reports, out, style_seed } => {
            let loaded: Vec<ExperimentReport> = reports.iter().map(|p| load_report(p)).collect::<Result<_, _>>()?;
            let refs: Vec<&ExperimentReport> = loaded.iter().collect();
            let style = PlotStyle { seed: style_seed, ..PlotStyle::default() };
            for p in plot_report(&refs, &out, &style)? {
                println!("{}", p.display());
            }
            Ok(Outcome::Done)
        }
        Command::DescribeConfig { cfg } => {
            let config = cfg.load(None)?;
            println!("# fingerprint {}", config.fingerprint());
            println!("# run directory {}", config.run_dir().display());
            print!("{}", config.to_toml()?);
            Ok(Outcome::Done)
        }
    }
}

fn summarize(report: &ExperimentReport) {
    for r in &report.records {
        println!("{} seed {}: top3 {:.4} final {:.4}", report.name, r.seed, r.top3, r.final_score);
    }
    for f in &report.failures {
        println!("{} seed {}: FAILED {}", report.name, f.seed, f.error);
    }
    match report.aggregate {
        Some(a) => println!("{}: mean top3 {:.4} [{:.4}, {:.4}]", report.name, a.mean, a.lo, a.hi),
        None => println!("{}: no successful seeds", report.name),
    }
}

fn run_and_report(config: &ExperimentConfig) -> Result<Outcome, BenchError> {
    let report = run_experiment(config)?;
    emit_outputs(&report, &config.run_dir(), &OutputFormat::ALL, &PlotStyle::default())?;
    summarize(&report);
    println!("outputs in {}", config.run_dir().display());
    outcome(&report)
}

fn outcome(report: &ExperimentReport) -> Result<Outcome, BenchError> {
    if report.records.is_empty() {
        return Err(BenchError::AllSeedsFailed(report.failures.len()));
    }
    Ok(if report.partial { Outcome::Partial } else { Outcome::Done })
}

/// Runs each configuration in turn and draws them on shared plots under
/// `<output_dir>/<base name>`.
fn run_group(base: &ExperimentConfig, configs: Vec<ExperimentConfig>) -> Result<Outcome, BenchError> {
    for c in &configs {
        c.validate()?;
    }
    let mut reports = Vec::with_capacity(configs.len());
    let mut partial = false;
    for c in &configs {
        let report = run_experiment(c)?;
        emit_outputs(&report, &c.run_dir(), &OutputFormat::ALL, &PlotStyle::default())?;
        summarize(&report);
        partial |= matches!(outcome(&report)?, Outcome::Partial);
        reports.push(report);
    }
    let dir = base.output_dir.join(&base.name);
    let refs: Vec<&ExperimentReport> = reports.iter().collect();
    for p in plot_report(&refs, &dir, &PlotStyle::default())? {
        println!("{}", p.display());
    }
    Ok(if partial { Outcome::Partial } else { Outcome::Done })
}

fn eval_checkpoint(config: &ExperimentConfig, path: &Path, episodes: usize) -> Result<Outcome, BenchError> {
    if episodes == 0 {
        return Err(BenchError::Config("need at least one evaluation episode".into()));
    }
    let ckpt = Checkpoint::load(path)?;
    let bounds = reference_bounds_for(config)?;
    let budget = TrainBudget::default();
    let make = || make_task(config);
    let mut envs: Vec<_> = (0..episodes.min(16)).map(|_| make_task(config)).collect();
    let seeds: Vec<u64> =
        (0..episodes as u64).map(|i| RngPolicy::new(config.seeds[0]).derive_seed("bench/eval", i)).collect();
    let (ret, success) = match ckpt.kind() {
        Some("offpolicy") => {
            let t = OffPolicyTrainer::resume(&ckpt, budget, bounds, &make)?;
            evaluate_returns(t.agent(), &mut envs, &seeds)?
        }
        Some("onpolicy") => {
            let t = OnPolicyTrainer::resume(&ckpt, budget, bounds, &make)?;
            evaluate_returns(t.agent(), &mut envs, &seeds)?
        }
        other => return Err(BenchError::Format(format!("{}: unknown checkpoint kind {other:?}", path.display()))),
    };
    println!(
        "return {ret:.4} normalized {:.4} success {success:.4} over {episodes} episodes",
        bounds.normalize(ret)?
    );
    Ok(Outcome::Done)
}

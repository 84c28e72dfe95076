//! Argument parsing and subcommand dispatch.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dreamplan_core::env::{EnvConfig, NoiseLevel};
use dreamplan_core::internal_model::Variant;
use dreamplan_core::planner::{PlannerConfig, Precision};
use dreamplan_core::trainer::{Checkpoint, TrainConfig};
use serde::de::DeserializeOwned;

use crate::ablation::{run_ablation, AblationSpec};
use crate::bench::{run_bench, BenchSpec};
use crate::config::{prepare_out_dir, require_file, RunConfig};
use crate::error::{HarnessError, Result};
use crate::eval::{run_eval, EvalSpec};
use crate::plots::{export_plots, Panel};
use crate::profile::{CommandProfile, ProfileName, ProfileSpec};
use crate::schema::{self, validate_dir};
use crate::train::{run_train, TrainEvalSettings};

#[derive(Debug, Parser)]
#[command(
    name = "dreamplan",
    version,
    about = "Train, evaluate and benchmark internal-model planners"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Co-train experts and internal model; writes checkpoints and metrics.
    Train(TrainArgs),
    /// Paired policy-only vs planner episodes on identical seeds.
    Eval(EvalArgs),
    /// Closed-loop planner latency.
    Bench(BenchArgs),
    /// Internal-model vs observation-only actor across noise levels.
    Ablate(AblateArgs),
    /// Render SVG panels from episode CSVs.
    ExportPlots(PlotArgs),
    /// Check every file in an output directory against its schema.
    ValidateLogs(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

fn serde_value<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// nlm, plm or flm.
    #[arg(long, value_parser = serde_value::<Variant>)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Parallel environments per iteration.
    #[arg(long)]
    pub envs: Option<usize>,
    /// none, low, medium or high.
    #[arg(long, value_parser = serde_value::<NoiseLevel>)]
    pub noise: Option<NoiseLevel>,
    /// Held-out evaluation episodes after training.
    #[arg(long, default_value_t = 8)]
    pub eval_episodes: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<ProfileName>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_parser = serde_value::<NoiseLevel>)]
    pub noise: Option<NoiseLevel>,
    /// f64 or f32 planner arithmetic.
    #[arg(long, value_parser = serde_value::<Precision>)]
    pub precision: Option<Precision>,
    /// Log the best and executed dreams of every plan.
    #[arg(long)]
    pub record_dreams: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Gaussian samples per iteration.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Policy-guided samples per iteration.
    #[arg(long)]
    pub policy_samples: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_parser = serde_value::<Precision>)]
    pub precision: Option<Precision>,
    /// Fold every candidate into the digest.
    #[arg(long)]
    pub hash_candidates: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Seeds `seed, seed + 1, …`.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 8)]
    pub eval_episodes: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Episode CSV, or a directory whose CSVs are all rendered.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Panels to render; overrides the config's list.
    #[arg(long = "panel", value_enum)]
    pub panels: Vec<Panel>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub dir: PathBuf,
}

pub const DEFAULT_EPISODES: usize = 10;
pub const DEFAULT_EPISODE_STEPS: usize = 300;
pub const DEFAULT_BENCH_STEPS: usize = 1000;

/// Runs one subcommand, returning the lines to print.
pub fn run(cli: Cli) -> Result<Vec<String>> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::ExportPlots(a) => cmd_export_plots(a),
        Command::ValidateLogs(a) => cmd_validate(a),
    }
}

fn train_config(cfg: &RunConfig, seed: u64) -> Result<TrainConfig> {
    let mut t = cfg.train.clone().unwrap_or_default();
    if let Some(env) = cfg.load_env()? {
        t.env = env;
    }
    if let Some(n) = cfg.noise {
        t.env.noise = n;
    }
    t.seed = seed;
    Ok(t)
}

fn cmd_train(a: TrainArgs) -> Result<Vec<String>> {
    let cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    let mut t = train_config(&cfg, a.common.seed)?;
    if let Some(v) = a.variant {
        t.model.variant = v;
    }
    if let Some(h) = a.horizon {
        t.model.horizon = h;
    }
    if let Some(i) = a.iters {
        t.iterations = i;
    }
    if let Some(n) = a.envs {
        t.ppo.num_envs = n;
    }
    if let Some(n) = a.noise {
        t.env.noise = n;
    }
    prepare_out_dir(&a.common.out)?;
    let eval = TrainEvalSettings {
        episodes: a.eval_episodes,
        ..TrainEvalSettings::default()
    };
    let (_, s) = run_train(&t, Some(&a.common.out), eval)?;
    Ok(vec![
        format!(
            "mean return {:.2} (cloned {:.2}, zero-action {:.2})",
            s.mean_expert_return, s.mean_cloned_return, s.mean_zero_action_return
        ),
        format!(
            "dynamics mse {:.3e} vs no-change {:.3e}, bc mse {:.3e}",
            s.diagnostics.dynamics_mse, s.diagnostics.no_change_mse, s.diagnostics.bc_mse
        ),
        format!("wrote {}", a.common.out.display()),
    ])
}

/// Checkpoint, env, planner and profile shared by eval and bench.
struct Resolved {
    checkpoint_path: PathBuf,
    checkpoint: Checkpoint,
    env: EnvConfig,
    planner: PlannerConfig,
    profile: CommandProfile,
}

fn resolve(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    noise: Option<NoiseLevel>,
    precision: Option<Precision>,
    profile: Option<ProfileName>,
    default_profile: ProfileName,
) -> Result<Resolved> {
    let path = checkpoint
        .or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| HarnessError::Config("no checkpoint given (--checkpoint or config)".into()))?;
    require_file(&path)?;
    let checkpoint = Checkpoint::load(&path)?;
    let mut env = match cfg.load_env()? {
        Some(e) => e,
        None => Checkpoint::load_config(&path)?.env,
    };
    if let Some(n) = noise.or(cfg.noise) {
        env.noise = n;
    }
    let mut planner = match cfg.load_planner()? {
        Some(p) => p,
        None => PlannerConfig {
            precision: Precision::F32,
            ..PlannerConfig::for_env(&env)
        },
    };
    if let Some(p) = precision {
        planner.precision = p;
    }
    let spec = match profile {
        Some(p) => ProfileSpec::Named(p),
        None => cfg.profile.clone().unwrap_or(ProfileSpec::Named(default_profile)),
    };
    let profile = spec.resolve(&env)?;
    Ok(Resolved {
        checkpoint_path: path,
        checkpoint,
        env,
        planner,
        profile,
    })
}

fn write_run_config(out: &Path, body: serde_json::Value) -> Result<()> {
    schema::write_json(
        &out.join("config.json"),
        &schema::tagged("dreamplan.run_config", &body)?,
    )
}

fn cmd_eval(a: EvalArgs) -> Result<Vec<String>> {
    let cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    let r = resolve(&cfg, a.checkpoint, a.noise, a.precision, a.profile, ProfileName::Benign)?;
    let episodes = a.episodes.or(cfg.episodes).unwrap_or(DEFAULT_EPISODES);
    let steps = a.steps.or(cfg.episode_steps).unwrap_or(DEFAULT_EPISODE_STEPS);
    prepare_out_dir(&a.common.out)?;
    write_run_config(
        &a.common.out,
        serde_json::json!({
            "subcommand": "eval",
            "seed": a.common.seed,
            "checkpoint": r.checkpoint_path,
            "env": r.env,
            "planner": r.planner,
            "profile": r.profile,
            "episodes": episodes,
            "episode_steps": steps,
            "record_dreams": a.record_dreams,
        }),
    )?;
    let spec = EvalSpec {
        env: &r.env,
        checkpoint: &r.checkpoint,
        planner: &r.planner,
        profile: &r.profile,
        episodes,
        steps,
        seed: a.common.seed,
        record_dreams: a.record_dreams,
    };
    let s = run_eval(&spec, Some(&a.common.out))?;
    let line = |name: &str, m: &crate::eval::ModeAggregate| {
        format!(
            "{name:8} exceedance {:.4}  peak roll {:.3}  peak pitch {:.3}  tracking {:.3}  falls {}",
            m.mean_joint_exceedance_fraction, m.max_peak_abs_roll, m.max_peak_abs_pitch, m.mean_tracking_error, m.falls
        )
    };
    Ok(vec![
        line("policy", &s.policy),
        line("planner", &s.planner_mode),
        format!(
            "planner exceedance <= policy on {}/{} seeds; command adapted in {}/{} episodes",
            s.paired.planner_exceedance_not_worse, s.paired.pairs, s.paired.planner_episodes_adapting, s.paired.pairs
        ),
    ])
}

fn cmd_bench(a: BenchArgs) -> Result<Vec<String>> {
    let cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    let mut r = resolve(&cfg, a.checkpoint, None, a.precision, None, ProfileName::Benign)?;
    if let Some(m) = a.samples {
        r.planner.samples = m;
    }
    if let Some(m) = a.policy_samples {
        r.planner.policy_samples = m;
    }
    if let Some(n) = a.iterations {
        r.planner.iterations = n;
    }
    r.planner.elites = r
        .planner
        .elites
        .min(r.planner.samples + r.planner.policy_samples)
        .max(1);
    let steps = a.steps.or(cfg.bench_steps).unwrap_or(DEFAULT_BENCH_STEPS);
    prepare_out_dir(&a.common.out)?;
    write_run_config(
        &a.common.out,
        serde_json::json!({
            "subcommand": "bench",
            "seed": a.common.seed,
            "checkpoint": r.checkpoint_path,
            "env": r.env,
            "planner": r.planner,
            "profile": r.profile,
            "bench_steps": steps,
            "hash_candidates": a.hash_candidates,
        }),
    )?;
    let report = run_bench(&BenchSpec {
        env: &r.env,
        checkpoint: &r.checkpoint,
        planner: &r.planner,
        profile: &r.profile,
        steps,
        seed: a.common.seed,
        hash_candidates: a.hash_candidates,
    })?;
    schema::write_json(&a.common.out.join("bench.json"), &report)?;
    Ok(vec![format!(
        "{} steps: median {:.3} ms, p95 {:.3} ms, {:.1} Hz, digest {}",
        report.steps, report.latency.median_ms, report.latency.p95_ms, report.hz, report.digest
    )])
}

fn cmd_ablate(a: AblateArgs) -> Result<Vec<String>> {
    let cfg = RunConfig::load_or_default(a.common.config.as_deref())?;
    let base = train_config(&cfg, a.common.seed)?;
    let mut spec = AblationSpec::new(base, a.iters);
    spec.seeds = (0..a.seeds).map(|i| a.common.seed + i).collect();
    spec.eval_episodes = a.eval_episodes;
    prepare_out_dir(&a.common.out)?;
    let report = run_ablation(&spec, |c| {
        eprintln!("{} {:?} seed {}: {:.2}", c.noise.name(), c.actor, c.seed, c.mean_return);
    })?;
    schema::write_json(&a.common.out.join("ablation.json"), &report)?;
    Ok(report.table.lines().map(str::to_string).collect())
}

fn cmd_export_plots(a: PlotArgs) -> Result<Vec<String>> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let panels = if a.panels.is_empty() {
        cfg.panels.clone().unwrap_or_else(|| Panel::ALL.to_vec())
    } else {
        a.panels.clone()
    };
    let inputs: Vec<PathBuf> = if a.input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(&a.input)
            .map_err(HarnessError::file(&a.input))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        v.sort();
        if v.is_empty() {
            return Err(HarnessError::invalid(&a.input, "no CSV files"));
        }
        v
    } else {
        require_file(&a.input)?;
        vec![a.input.clone()]
    };
    let mut lines = Vec::new();
    for csv in &inputs {
        let files = export_plots(csv, &panels, &a.out)?;
        lines.push(format!("{}: {} panels", csv.display(), files.len()));
    }
    Ok(lines)
}

fn cmd_validate(a: ValidateArgs) -> Result<Vec<String>> {
    let report = validate_dir(&a.dir)?;
    if report.ok() {
        Ok(vec![format!("{} files valid", report.files_checked)])
    } else {
        Err(HarnessError::invalid(
            &a.dir,
            format!("{} problem(s):\n{}", report.problems.len(), report.problems.join("\n")),
        ))
    }
}

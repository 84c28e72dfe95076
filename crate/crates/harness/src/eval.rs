//! Paired policy-vs-planner evaluation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dreamplan_core::env::EnvConfig;
use dreamplan_core::internal_model::Variant;
use dreamplan_core::planner::{Planner, PlannerConfig};
use dreamplan_core::seed::derive_seed;
use dreamplan_core::trainer::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::episode::{run_episode, DiagnosticsSink, Episode, EpisodeSpec, EpisodeSummary, Mode, StepRecord};
use crate::error::{HarnessError, Result};
use crate::profile::CommandProfile;
use crate::schema::{self, SCHEMA_VERSION};

pub struct EvalSpec<'a> {
    pub env: &'a EnvConfig,
    pub checkpoint: &'a Checkpoint,
    pub planner: &'a PlannerConfig,
    pub profile: &'a CommandProfile,
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
    /// Include dreamed trajectories in the planner diagnostics stream.
    pub record_dreams: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub episodes: usize,
    pub falls: usize,
    pub mean_joint_exceedance_fraction: f64,
    pub max_peak_abs_roll: f64,
    pub max_peak_abs_pitch: f64,
    pub mean_tracking_error: f64,
    pub mean_total_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub pairs: usize,
    /// Pairs where the planner's exceedance fraction is at most the policy's.
    pub planner_exceedance_not_worse: usize,
    /// Planner episodes with at least one adapted command.
    pub planner_episodes_adapting: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub schema: String,
    pub schema_version: u32,
    pub seed: u64,
    pub steps: usize,
    pub profile: CommandProfile,
    pub planner: PlannerConfig,
    pub episodes: Vec<EpisodeSummary>,
    pub policy: ModeAggregate,
    pub planner_mode: ModeAggregate,
    pub paired: PairedComparison,
}

pub fn check_checkpoint(env: &EnvConfig, ckpt: &Checkpoint) -> Result<()> {
    let dims = &ckpt.model.dreamer.dims;
    if ckpt.model.dreamer.variant != Variant::Nlm {
        return Err(dreamplan_core::Error::Variant {
            expected: "nlm".into(),
            got: ckpt.model.dreamer.variant.to_string(),
        }
        .into());
    }
    if dims.joints != env.joints {
        return Err(HarnessError::Config(format!(
            "checkpoint has {} joints, env has {}",
            dims.joints, env.joints
        )));
    }
    Ok(())
}

/// Episode seed `e` of an evaluation seeded with `seed`.
pub fn episode_seed(seed: u64, e: usize) -> u64 {
    derive_seed(seed, &[e as u64])
}

/// Runs both modes on every episode seed, policy first. With `out`, writes
/// `episodes/seed_XXX_{policy,planner}.csv`, planner diagnostics JSONL and
/// `summary.json`.
pub fn run_eval(spec: &EvalSpec, out: Option<&Path>) -> Result<EvalSummary> {
    check_checkpoint(spec.env, spec.checkpoint)?;
    let mut planner = Planner::new(&spec.checkpoint.model.dreamer, spec.planner.clone())?;
    let episodes_dir = out.map(|o| o.join("episodes"));
    if let Some(d) = &episodes_dir {
        fs::create_dir_all(d).map_err(HarnessError::file(d))?;
    }
    let mut summaries = Vec::with_capacity(2 * spec.episodes);
    for e in 0..spec.episodes {
        let ep = EpisodeSpec {
            env: spec.env,
            checkpoint: spec.checkpoint,
            profile: spec.profile,
            steps: spec.steps,
            seed: episode_seed(spec.seed, e),
        };
        let policy = run_episode(&ep, None, None)?;
        let planned = match &episodes_dir {
            Some(d) => {
                let path = d.join(format!("seed_{e:03}_planner_diagnostics.jsonl"));
                let mut w = BufWriter::new(File::create(&path).map_err(HarnessError::file(&path))?);
                let sink = DiagnosticsSink {
                    writer: &mut w,
                    dreams: spec.record_dreams,
                };
                let ep = run_episode(&ep, Some(&mut planner), Some(sink))?;
                w.flush().map_err(HarnessError::file(&path))?;
                ep
            }
            None => run_episode(&ep, Some(&mut planner), None)?,
        };
        if let Some(d) = &episodes_dir {
            for (mode, episode) in [(Mode::Policy, &policy), (Mode::Planner, &planned)] {
                write_episode_csv(&d.join(format!("seed_{e:03}_{}.csv", mode.name())), spec.env, episode)?;
            }
        }
        summaries.push(policy.summary);
        summaries.push(planned.summary);
    }

    let pick = |m: Mode| summaries.iter().filter(|s| s.mode == m).cloned().collect::<Vec<_>>();
    let (pol, pla) = (pick(Mode::Policy), pick(Mode::Planner));
    let paired = PairedComparison {
        pairs: pol.len(),
        planner_exceedance_not_worse: pol
            .iter()
            .zip(&pla)
            .filter(|(a, b)| b.joint_exceedance_fraction <= a.joint_exceedance_fraction)
            .count(),
        planner_episodes_adapting: pla.iter().filter(|s| s.adapted_steps > 0).count(),
    };
    let summary = EvalSummary {
        schema: "dreamplan.eval_summary".into(),
        schema_version: SCHEMA_VERSION,
        seed: spec.seed,
        steps: spec.steps,
        profile: spec.profile.clone(),
        planner: spec.planner.clone(),
        policy: aggregate(&pol),
        planner_mode: aggregate(&pla),
        paired,
        episodes: summaries,
    };
    if let Some(o) = out {
        schema::write_json(&o.join("summary.json"), &summary)?;
    }
    Ok(summary)
}

fn aggregate(s: &[EpisodeSummary]) -> ModeAggregate {
    let n = s.len().max(1) as f64;
    let mean = |f: fn(&EpisodeSummary) -> f64| s.iter().map(f).sum::<f64>() / n;
    ModeAggregate {
        episodes: s.len(),
        falls: s.iter().filter(|e| e.fell).count(),
        mean_joint_exceedance_fraction: mean(|e| e.joint_exceedance_fraction),
        max_peak_abs_roll: s.iter().map(|e| e.peak_abs_roll).fold(0.0, f64::max),
        max_peak_abs_pitch: s.iter().map(|e| e.peak_abs_pitch).fold(0.0, f64::max),
        mean_tracking_error: mean(|e| e.mean_tracking_error),
        mean_total_reward: mean(|e| e.total_reward),
    }
}

/// Column names of the episode CSV for `joints` joints.
pub fn episode_columns(joints: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "step",
        "target_vx",
        "target_vy",
        "target_wz",
        "command_vx",
        "command_vy",
        "command_wz",
        "twist_vx",
        "twist_vy",
        "twist_wz",
        "roll",
        "pitch",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..joints).map(|i| format!("q{i}")));
    cols.extend((0..joints).map(|i| format!("q_max{i}")));
    cols.extend((0..joints).map(|i| format!("action{i}")));
    cols.extend(["reward".to_string(), "feasible".to_string()]);
    cols
}

/// Writes one episode as CSV, preceded by a `#` schema line. Joint columns
/// `q{i}` hold offsets from the nominal pose.
pub fn write_episode_csv(path: &PathBuf, env: &EnvConfig, episode: &Episode) -> Result<()> {
    let csv_err = |source| HarnessError::Csv {
        path: path.clone(),
        source,
    };
    let mut file = BufWriter::new(File::create(path).map_err(HarnessError::file(path))?);
    writeln!(file, "{}", schema::csv_schema_line(schema::EPISODE_CSV)).map_err(HarnessError::file(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(episode_columns(env.joints)).map_err(csv_err)?;
    for r in &episode.records {
        w.write_record(record_fields(env, r)).map_err(csv_err)?;
    }
    w.flush().map_err(HarnessError::file(path))?;
    Ok(())
}

fn record_fields(env: &EnvConfig, r: &StepRecord) -> Vec<String> {
    let mut f = vec![r.step.to_string()];
    let nums = r
        .target
        .iter()
        .chain(&r.command)
        .chain(&r.twist)
        .chain([&r.roll, &r.pitch])
        .chain(&r.joint_offsets)
        .chain(&env.q_max)
        .chain(&r.action)
        .chain([&r.reward]);
    f.extend(nums.map(|v| v.to_string()));
    f.push(r.feasible.map_or(String::new(), |b| b.to_string()));
    f
}

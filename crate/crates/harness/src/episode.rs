//! Closed-loop episodes on the surrogate, driven either by the cloned
//! policy alone or by the planner.

use std::io::Write;

use dreamplan_core::env::{clamp_action, Env, EnvConfig, Twist};
use dreamplan_core::internal_model::ObservationHistory;
use dreamplan_core::planner::{PlanDistribution, Planner, SCHEMA_VERSION};
use dreamplan_core::seed::derive_seed;
use dreamplan_core::trainer::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::profile::CommandProfile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Policy,
    Planner,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Policy => "policy",
            Mode::Planner => "planner",
        }
    }
}

/// State after one control step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub target: [f64; 3],
    /// Command the controller acted on: the target in policy mode, the
    /// optimized command in planner mode.
    pub command: [f64; 3],
    pub twist: [f64; 3],
    pub roll: f64,
    pub pitch: f64,
    /// `q − q_nominal`.
    pub joint_offsets: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    /// Planner mode only.
    pub feasible: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub mode: Mode,
    pub steps: usize,
    pub fell: bool,
    pub total_reward: f64,
    /// Fraction of steps with any `|q_i − q_nom,i| > q_max,i`.
    pub joint_exceedance_fraction: f64,
    pub peak_abs_roll: f64,
    pub peak_abs_pitch: f64,
    /// Mean `‖twist − target‖₂`.
    pub mean_tracking_error: f64,
    /// Steps whose command differs from the target.
    pub adapted_steps: usize,
    /// Planner mode: steps whose plan was feasible.
    pub feasible_steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub records: Vec<StepRecord>,
    pub summary: EpisodeSummary,
}

/// One planner step as logged to the diagnostics stream.
#[derive(Serialize)]
struct PlanStepLog<'a> {
    schema: &'static str,
    schema_version: u32,
    step: usize,
    target: [f64; 3],
    command: [f64; 3],
    action: &'a [f64],
    feasible: bool,
    chosen: dreamplan_core::planner::Chosen,
    best_return: &'a [Option<f64>],
    feasible_fraction: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    best_dream: Option<&'a Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan_dream: Option<&'a Vec<Vec<f64>>>,
}

pub struct EpisodeSpec<'a> {
    pub env: &'a EnvConfig,
    pub checkpoint: &'a Checkpoint,
    pub profile: &'a CommandProfile,
    pub steps: usize,
    pub seed: u64,
}

/// Sink for per-step planner diagnostics.
pub struct DiagnosticsSink<'a> {
    pub writer: &'a mut dyn Write,
    pub dreams: bool,
}

/// Runs one episode. Policy mode acts with `clamp(π_θ(o))` on the target
/// command; planner mode executes the first planned action with a shifted
/// warm start carried across steps. The env always tracks the target.
pub fn run_episode(
    spec: &EpisodeSpec,
    mut planner: Option<&mut Planner>,
    mut diagnostics: Option<DiagnosticsSink>,
) -> Result<Episode> {
    let env = spec.env;
    let layout = env.layout();
    let dreamer = &spec.checkpoint.model.dreamer;
    let velocity = &spec.checkpoint.model.velocity;
    let m = dreamer.dims.history;
    let mode = if planner.is_some() { Mode::Planner } else { Mode::Policy };

    let (mut sim, obs) = Env::new(env.clone(), spec.seed)?;
    let mut obs = obs.0;
    let mut history = ObservationHistory::new(m);
    let mut warm: Option<PlanDistribution> = None;
    let mut records = Vec::with_capacity(spec.steps);
    let mut fell = false;
    let mut feasible_steps = 0;

    for t in 0..spec.steps {
        let target = spec.profile.at(t);
        layout.set_command(&mut obs, &target);
        history.push(obs.clone());
        let (mut action, command, feasible) = match planner.as_deref_mut() {
            None => {
                let cond = dreamer.condition(velocity, &history.window_flat(m))?;
                (dreamer.act(&obs, &cond)?, target, None)
            }
            Some(p) => {
                let out = p.plan(&obs, target, warm.as_ref(), derive_seed(spec.seed, &[1, t as u64]))?;
                if let Some(sink) = diagnostics.as_mut() {
                    let d = &out.diagnostics;
                    let line = PlanStepLog {
                        schema: "dreamplan.plan_step",
                        schema_version: SCHEMA_VERSION,
                        step: t,
                        target: target.to_array(),
                        command: out.command.to_array(),
                        action: &out.action,
                        feasible: out.feasible,
                        chosen: d.chosen,
                        best_return: &d.best_return,
                        feasible_fraction: &d.feasible_fraction,
                        best_dream: d.best.dream.as_ref().filter(|_| sink.dreams),
                        plan_dream: d.plan.dream.as_ref().filter(|_| sink.dreams),
                    };
                    writeln!(sink.writer, "{}", serde_json::to_string(&line)?)?;
                }
                feasible_steps += out.feasible as usize;
                warm = Some(out.warm);
                (out.action, out.command, Some(out.feasible))
            }
        };
        clamp_action(env, &mut action);
        let tr = sim.step(&action, &target)?;
        let s = &tr.state;
        records.push(StepRecord {
            step: t,
            target: target.to_array(),
            command: command.to_array(),
            twist: s.twist,
            roll: s.tilt[0],
            pitch: s.tilt[1],
            joint_offsets: s.joint_offsets(env),
            action,
            reward: tr.reward,
            feasible,
        });
        if tr.done {
            fell = !tr.timeout;
            break;
        }
        obs = tr.observation.0;
    }

    let summary = summarize(
        env,
        &records,
        spec.seed,
        mode,
        fell,
        planner.is_some().then_some(feasible_steps),
    );
    Ok(Episode { records, summary })
}

fn summarize(
    env: &EnvConfig,
    records: &[StepRecord],
    seed: u64,
    mode: Mode,
    fell: bool,
    feasible_steps: Option<usize>,
) -> EpisodeSummary {
    let n = records.len().max(1) as f64;
    let exceed = records
        .iter()
        .filter(|r| r.joint_offsets.iter().zip(&env.q_max).any(|(q, l)| q.abs() > *l))
        .count();
    let tracking: f64 = records
        .iter()
        .map(|r| {
            let d: f64 = r.twist.iter().zip(&r.target).map(|(v, t)| (v - t) * (v - t)).sum();
            d.sqrt()
        })
        .sum();
    EpisodeSummary {
        seed,
        mode,
        steps: records.len(),
        fell,
        total_reward: records.iter().map(|r| r.reward).sum(),
        joint_exceedance_fraction: exceed as f64 / n,
        peak_abs_roll: records.iter().map(|r| r.roll.abs()).fold(0.0, f64::max),
        peak_abs_pitch: records.iter().map(|r| r.pitch.abs()).fold(0.0, f64::max),
        mean_tracking_error: tracking / n,
        adapted_steps: records
            .iter()
            .filter(|r| Twist::from_array(r.command) != Twist::from_array(r.target))
            .count(),
        feasible_steps,
    }
}

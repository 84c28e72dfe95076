//! Eval returns of the internal-model actor against an observation-only
//! actor across observation-noise levels.

use std::fmt::Write as _;

use dreamplan_core::env::NoiseLevel;
use dreamplan_core::internal_model::ActorInputs;
use dreamplan_core::seed::derive_seed;
use dreamplan_core::trainer::{evaluate_returns, train, EvalPolicy, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::schema::SCHEMA_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    /// Everything but noise, actor inputs, seed and iterations.
    pub base: TrainConfig,
    pub iterations: usize,
    pub noise: Vec<NoiseLevel>,
    pub seeds: Vec<u64>,
    pub actors: Vec<ActorInputs>,
    pub eval_episodes: usize,
    pub eval_steps: usize,
}

impl AblationSpec {
    /// Three noise levels, five seeds, both actors; no policy cloning since
    /// only the expert is evaluated.
    pub fn new(base: TrainConfig, iterations: usize) -> Self {
        let mut base = base;
        base.distill.states = 0;
        base.checkpoint_every = 0;
        Self {
            base,
            iterations,
            noise: NoiseLevel::all().to_vec(),
            seeds: (0..5).collect(),
            actors: vec![ActorInputs::InternalModel, ActorInputs::Observation],
            eval_episodes: 8,
            eval_steps: 400,
        }
    }

    fn config(&self, noise: NoiseLevel, actor: ActorInputs, seed: u64) -> TrainConfig {
        let mut c = self.base.clone();
        c.env.noise = noise;
        c.model.actor_inputs = actor;
        c.seed = seed;
        c.iterations = self.iterations;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub noise: NoiseLevel,
    pub actor: ActorInputs,
    pub seed: u64,
    pub mean_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub noise: NoiseLevel,
    pub actor: ActorInputs,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation across seeds.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema: String,
    pub schema_version: u32,
    pub spec: AblationSpec,
    pub cells: Vec<AblationCell>,
    pub rows: Vec<AblationRow>,
    /// `rows` rendered as a markdown table.
    pub table: String,
}

/// Trains and evaluates one cell. Evaluation episodes come from a seed
/// shared by both actors so each pair faces the same episodes.
pub fn run_cell(spec: &AblationSpec, noise: NoiseLevel, actor: ActorInputs, seed: u64) -> Result<AblationCell> {
    let cfg = spec.config(noise, actor, seed);
    let out = train(&cfg, None)?;
    let eval_seed = derive_seed(seed, &[200]);
    let r = evaluate_returns(
        &cfg.env,
        &out.checkpoint,
        EvalPolicy::Expert,
        spec.eval_episodes,
        spec.eval_steps,
        eval_seed,
    )?;
    Ok(AblationCell {
        noise,
        actor,
        seed,
        mean_return: r.iter().sum::<f64>() / r.len().max(1) as f64,
    })
}

pub fn run_ablation(spec: &AblationSpec, mut progress: impl FnMut(&AblationCell)) -> Result<AblationReport> {
    let mut cells = Vec::new();
    for &noise in &spec.noise {
        for &actor in &spec.actors {
            for &seed in &spec.seeds {
                let c = run_cell(spec, noise, actor, seed)?;
                progress(&c);
                cells.push(c);
            }
        }
    }
    let rows = summarize(&cells, spec);
    let table = render_table(spec, &rows);
    Ok(AblationReport {
        schema: "dreamplan.ablation".into(),
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        cells,
        rows,
        table,
    })
}

fn summarize(cells: &[AblationCell], spec: &AblationSpec) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for &noise in &spec.noise {
        for &actor in &spec.actors {
            let v: Vec<f64> = cells
                .iter()
                .filter(|c| c.noise == noise && c.actor == actor)
                .map(|c| c.mean_return)
                .collect();
            let (mean, std) = mean_std(&v);
            rows.push(AblationRow {
                noise,
                actor,
                runs: v.len(),
                mean,
                std,
            });
        }
    }
    rows
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn actor_name(a: ActorInputs) -> &'static str {
    match a {
        ActorInputs::InternalModel => "internal model",
        ActorInputs::Observation => "observation only",
    }
}

/// Markdown table, one row per noise level, `mean ± std` per actor.
pub fn render_table(spec: &AblationSpec, rows: &[AblationRow]) -> String {
    let mut s = String::from("| noise |");
    for &a in &spec.actors {
        let _ = write!(s, " {} |", actor_name(a));
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(spec.actors.len()));
    s.push('\n');
    for &noise in &spec.noise {
        let _ = write!(s, "| {} |", noise.name());
        for &a in &spec.actors {
            match rows.iter().find(|r| r.noise == noise && r.actor == a) {
                Some(r) => {
                    let _ = write!(s, " {:.1} ± {:.1} |", r.mean, r.std);
                }
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s
}

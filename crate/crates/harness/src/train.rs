//! Training runs followed by a held-out evaluation.

use std::path::Path;

use dreamplan_core::seed::derive_seed;
use dreamplan_core::trainer::{
    evaluate_returns, model_diagnostics, train, EvalPolicy, ModelDiagnostics, TrainConfig, TrainOutcome,
};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::schema::{self, SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainEvalSettings {
    pub episodes: usize,
    pub steps: usize,
    pub diagnostic_samples: usize,
    pub diagnostic_steps: usize,
}

impl Default for TrainEvalSettings {
    fn default() -> Self {
        Self {
            episodes: 8,
            steps: 400,
            diagnostic_samples: 2000,
            diagnostic_steps: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema: String,
    pub schema_version: u32,
    pub seed: u64,
    pub iterations: usize,
    pub eval: TrainEvalSettings,
    /// Expert actor, one entry per evaluation episode.
    pub expert_returns: Vec<f64>,
    pub cloned_returns: Vec<f64>,
    pub zero_action_returns: Vec<f64>,
    pub mean_expert_return: f64,
    pub mean_cloned_return: f64,
    pub mean_zero_action_return: f64,
    pub beats_zero_action: bool,
    pub diagnostics: ModelDiagnostics,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Evaluates a finished run on episodes and transitions none of the
/// training seeds produce.
pub fn summarize(cfg: &TrainConfig, outcome: &TrainOutcome, eval: TrainEvalSettings) -> Result<TrainSummary> {
    let ck = &outcome.checkpoint;
    let eval_seed = derive_seed(cfg.seed, &[100]);
    let run = |p| evaluate_returns(&cfg.env, ck, p, eval.episodes, eval.steps, eval_seed);
    let expert = run(EvalPolicy::Expert)?;
    let cloned = run(EvalPolicy::Cloned)?;
    let zero = run(EvalPolicy::Zero)?;
    let diagnostics = model_diagnostics(
        &cfg.env,
        ck,
        eval.diagnostic_samples,
        eval.diagnostic_steps,
        derive_seed(cfg.seed, &[101]),
    )?;
    Ok(TrainSummary {
        schema: "dreamplan.train_summary".into(),
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        iterations: cfg.iterations,
        eval,
        mean_expert_return: mean(&expert),
        mean_cloned_return: mean(&cloned),
        mean_zero_action_return: mean(&zero),
        beats_zero_action: mean(&expert) > mean(&zero),
        expert_returns: expert,
        cloned_returns: cloned,
        zero_action_returns: zero,
        diagnostics,
    })
}

/// Trains, writing the trainer's files plus `summary.json` under `out`.
pub fn run_train(
    cfg: &TrainConfig,
    out: Option<&Path>,
    eval: TrainEvalSettings,
) -> Result<(TrainOutcome, TrainSummary)> {
    let outcome = train(cfg, out)?;
    let summary = summarize(cfg, &outcome, eval)?;
    if let Some(o) = out {
        schema::write_json(&o.join("summary.json"), &summary)?;
    }
    Ok((outcome, summary))
}

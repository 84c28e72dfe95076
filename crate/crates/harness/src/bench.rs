//! Closed-loop planner latency.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::time::Instant;

use dreamplan_core::env::{clamp_action, Env, EnvConfig};
use dreamplan_core::planner::{PlanDistribution, PlanOutput, Planner, PlannerConfig};
use dreamplan_core::seed::derive_seed;
use dreamplan_core::trainer::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::check_checkpoint;
use crate::profile::CommandProfile;
use crate::schema::SCHEMA_VERSION;

pub struct BenchSpec<'a> {
    pub env: &'a EnvConfig,
    pub checkpoint: &'a Checkpoint,
    pub planner: &'a PlannerConfig,
    pub profile: &'a CommandProfile,
    pub steps: usize,
    pub seed: u64,
    /// Fold every scored candidate into the digest (slower; for
    /// determinism checks).
    pub hash_candidates: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub schema_version: u32,
    pub seed: u64,
    pub steps: usize,
    pub planner: PlannerConfig,
    /// Episode resets during the run (falls or the episode cap).
    pub resets: usize,
    /// Wall-clock fields; everything else is deterministic.
    pub latency: Latency,
    pub hz: f64,
    /// Hash of every plan output (and of the candidates, when hashed).
    pub digest: String,
    pub candidates_hashed: bool,
}

/// Times `plan()` over `steps` control steps of a closed loop, resetting
/// the env when an episode ends.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport> {
    check_checkpoint(spec.env, spec.checkpoint)?;
    let mut planner = Planner::new(&spec.checkpoint.model.dreamer, spec.planner.clone())?;
    planner.set_record_candidates(spec.hash_candidates);
    let layout = spec.env.layout();
    let mut episode = 0u64;
    let (mut sim, obs) = Env::new(spec.env.clone(), derive_seed(spec.seed, &[episode]))?;
    let mut obs = obs.0;
    let mut t_ep = 0usize;
    let mut warm: Option<PlanDistribution> = None;
    let mut times = Vec::with_capacity(spec.steps);
    let mut hasher = DefaultHasher::new();

    for t in 0..spec.steps {
        let target = spec.profile.at(t_ep);
        layout.set_command(&mut obs, &target);
        let seed = derive_seed(spec.seed, &[1, t as u64]);
        let start = Instant::now();
        let out = planner.plan(&obs, target, warm.as_ref(), seed)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        hash_output(&out, spec.hash_candidates, &mut hasher);

        let mut a = out.action;
        clamp_action(spec.env, &mut a);
        let tr = sim.step(&a, &target)?;
        warm = Some(out.warm);
        t_ep += 1;
        if tr.done {
            episode += 1;
            obs = sim.reset(derive_seed(spec.seed, &[episode])).0;
            t_ep = 0;
            warm = None;
        } else {
            obs = tr.observation.0;
        }
    }

    let latency = latency_stats(&times);
    Ok(BenchReport {
        schema: "dreamplan.bench".into(),
        schema_version: SCHEMA_VERSION,
        seed: spec.seed,
        steps: spec.steps,
        planner: spec.planner.clone(),
        resets: episode as usize,
        hz: 1e3 / latency.median_ms,
        latency,
        digest: format!("{:016x}", hasher.finish()),
        candidates_hashed: spec.hash_candidates,
    })
}

fn hash_f64s(xs: &[f64], h: &mut DefaultHasher) {
    xs.len().hash(h);
    for x in xs {
        x.to_bits().hash(h);
    }
}

fn hash_output(out: &PlanOutput, candidates: bool, h: &mut DefaultHasher) {
    hash_f64s(&out.command.to_array(), h);
    hash_f64s(&out.action, h);
    hash_f64s(&out.final_distribution.mean, h);
    hash_f64s(&out.final_distribution.std, h);
    for r in &out.diagnostics.best_return {
        r.map(f64::to_bits).hash(h);
    }
    if candidates {
        for c in out.diagnostics.candidates.iter().flatten().flatten() {
            hash_f64s(&c.decision, h);
            c.ret.to_bits().hash(h);
            hash_f64s(&c.constraints, h);
            c.feasible.hash(h);
        }
    }
}

/// Median and nearest-rank p95 of `ms`.
pub fn latency_stats(ms: &[f64]) -> Latency {
    let mut s = ms.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return Latency {
            median_ms: f64::NAN,
            p95_ms: f64::NAN,
            mean_ms: f64::NAN,
            min_ms: f64::NAN,
            max_ms: f64::NAN,
        };
    }
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Latency {
        median_ms: median,
        p95_ms: s[rank - 1],
        mean_ms: s.iter().sum::<f64>() / n as f64,
        min_ms: s[0],
        max_ms: s[n - 1],
    }
}

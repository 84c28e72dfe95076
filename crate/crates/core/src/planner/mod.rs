//! Constrained MPPI over the NLM dreamer: jointly optimizes a twist command
//! and an `H`-step action sequence against the learned reward, value and
//! constraint channels.

mod constraints;
mod elite;
mod kernel;
mod nonfinite;

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use constraints::{default_constraints, Constraint, ConstraintFn, ConstraintKind, StepInput};
pub use elite::{elite_update, rank, EliteUpdate};

use crate::env::{EnvConfig, ObsLayout, Twist};
use crate::error::{Error, Result};
use crate::internal_model::{DreamerBundle, Variant};
use crate::seed::derive_seed;
use kernel::{Actions, Kernel, RolloutSpec, Scored};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// How `(ν*, a*)` is read off the final distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extraction {
    #[default]
    Mean,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub iterations: usize,
    pub samples: usize,
    pub policy_samples: usize,
    pub elites: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub momentum: f64,
    pub temperature: f64,
    /// Per-dimension standard deviation floor.
    pub std_min: f64,
    pub init_std_action: f64,
    pub init_std_command: [f64; 3],
    /// Half-width of the command box around the target.
    pub command_deviation: [f64; 3],
    pub policy_action_jitter: f64,
    pub policy_command_jitter: [f64; 3],
    pub constraints: Vec<Constraint>,
    pub precision: Precision,
    pub extraction: Extraction,
}

pub const DEFAULT_TILT_MAX: f64 = 0.25;

impl Default for PlannerConfig {
    fn default() -> Self {
        Self::for_env(&EnvConfig::new(4, 0))
    }
}

impl PlannerConfig {
    pub fn for_env(env: &EnvConfig) -> Self {
        let command_deviation = [1.0, 1.0, 0.5];
        Self {
            horizon: 10,
            iterations: 6,
            samples: 500,
            policy_samples: 30,
            elites: 60,
            gamma: 0.99,
            lambda: 1.0,
            momentum: 0.95,
            temperature: 0.5,
            std_min: 0.02,
            init_std_action: 0.2,
            init_std_command: [0.3, 0.3, 0.15],
            command_deviation,
            policy_action_jitter: 0.1,
            policy_command_jitter: [0.2, 0.2, 0.1],
            constraints: default_constraints(env, DEFAULT_TILT_MAX, command_deviation),
            precision: Precision::F64,
            extraction: Extraction::Mean,
        }
    }

    pub fn validate(&self, layout: ObsLayout) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("planner: {m}")));
        if self.horizon == 0 || self.iterations == 0 {
            return bad("horizon and iterations must be at least 1");
        }
        if self.samples + self.policy_samples == 0 {
            return bad("no candidates per iteration");
        }
        if self.elites == 0 || self.elites > self.samples + self.policy_samples {
            return bad("elite count must lie in [1, M + M_pi]");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return bad("momentum must lie in (0, 1]");
        }
        if !(self.temperature > 0.0) || !(self.std_min > 0.0) || !(self.lambda >= 0.0) {
            return bad("temperature and std floor must be positive, lambda nonnegative");
        }
        let nonneg = |v: &[f64]| v.iter().all(|x| *x >= 0.0);
        if !nonneg(&self.init_std_command)
            || !nonneg(&self.command_deviation)
            || !nonneg(&self.policy_command_jitter)
            || !(self.init_std_action >= 0.0)
            || !(self.policy_action_jitter >= 0.0)
        {
            return bad("spreads and deviation bounds must be nonnegative");
        }
        for c in &self.constraints {
            c.validate(layout)?;
        }
        Ok(())
    }

    pub fn decision_dim(&self, joints: usize) -> usize {
        3 + self.horizon * joints
    }
}

/// Diagonal Gaussian over the decision vector `[ν ⊕ a_0 ⊕ … ⊕ a_{H−1}]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDistribution {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PlanDistribution {
    pub fn command(&self) -> [f64; 3] {
        [self.mean[0], self.mean[1], self.mean[2]]
    }

    pub fn validate(&self, dim: usize, std_min: f64) -> Result<()> {
        if self.mean.len() != dim {
            return Err(Error::shape("plan distribution mean", dim, self.mean.len()));
        }
        if self.std.len() != dim {
            return Err(Error::shape("plan distribution std", dim, self.std.len()));
        }
        if self.mean.iter().chain(&self.std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plan distribution".into()));
        }
        if self.std.iter().any(|s| *s < std_min) {
            return Err(Error::InvalidConfig("plan distribution std below floor".into()));
        }
        Ok(())
    }
}

/// Box the decision vector lives in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionBounds {
    pub target: [f64; 3],
    pub command_deviation: [f64; 3],
    pub action_bound: f64,
}

impl DecisionBounds {
    pub fn clamp(&self, d: &mut [f64]) {
        for i in 0..3 {
            let (lo, hi) = (
                self.target[i] - self.command_deviation[i],
                self.target[i] + self.command_deviation[i],
            );
            d[i] = d[i].clamp(lo, hi);
        }
        for a in &mut d[3..] {
            *a = a.clamp(-self.action_bound, self.action_bound);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Policy,
    Gaussian,
    Carryover,
    Mean,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// `[ν ⊕ a_0 ⊕ … ⊕ a_{H−1}]`, time-major actions.
    pub decision: Vec<f64>,
    #[serde(rename = "return", with = "nonfinite::neg_inf")]
    pub ret: f64,
    /// Discounted constraint sums, one per channel.
    #[serde(with = "nonfinite::vec_nan")]
    pub constraints: Vec<f64>,
    pub feasible: bool,
    /// `Σ_c max(0, C_c − b_c)`; infinite for non-finite rollouts.
    #[serde(with = "nonfinite::pos_inf")]
    pub violation: f64,
    pub source: Source,
    /// `H + 1` dreamed observations, when recorded.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "nonfinite::dream_nan")]
    pub dream: Option<Vec<Vec<f64>>>,
}

impl Candidate {
    fn new(decision: Vec<f64>, ret: f64, constraints: Vec<f64>, specs: &[Constraint], source: Source) -> Self {
        let finite = ret.is_finite() && constraints.iter().all(|c| c.is_finite());
        let (feasible, violation) = if finite {
            let v = constraints
                .iter()
                .zip(specs)
                .map(|(c, s)| (c - s.bound).max(0.0))
                .sum::<f64>();
            (constraints.iter().zip(specs).all(|(c, s)| *c <= s.bound), v)
        } else {
            (false, f64::INFINITY)
        };
        Self {
            decision,
            ret: if finite { ret } else { f64::NEG_INFINITY },
            constraints,
            feasible,
            violation,
            source,
            dream: None,
        }
    }

    pub fn command(&self) -> [f64; 3] {
        [self.decision[0], self.decision[1], self.decision[2]]
    }

    pub fn actions(&self) -> &[f64] {
        &self.decision[3..]
    }
}

/// Reference scorer for one candidate: `Σ γ^k r_θ(ô_k, a_k) + γ^H V_θ(ô_H)
/// − λ Σ_c C_c` with `C_c = Σ γ^k c(ô_k, a_k, ν)`, dream recorded.
#[allow(clippy::too_many_arguments)]
pub fn score_trajectory(
    bundle: &DreamerBundle,
    observation: &[f64],
    command: [f64; 3],
    actions: &[f64],
    target: [f64; 3],
    cfg: &PlannerConfig,
) -> Result<Candidate> {
    expect_nlm(bundle)?;
    let layout = bundle.layout();
    let k = layout.joints;
    let h = cfg.horizon;
    if observation.len() != layout.dim() {
        return Err(Error::shape("planner observation", layout.dim(), observation.len()));
    }
    if actions.len() != h * k {
        return Err(Error::shape("candidate actions", h * k, actions.len()));
    }
    let mut o = observation.to_vec();
    o[layout.command()].copy_from_slice(&command);
    let mut dream = Vec::with_capacity(h + 1);
    let mut reward_sum = 0.0;
    let mut csum = vec![0.0; cfg.constraints.len()];
    let mut disc = 1.0;
    for step in 0..h {
        let a = &actions[step * k..(step + 1) * k];
        let r = bundle.predict_reward(&o, &[], a)?;
        reward_sum += disc * r;
        let input = StepInput {
            observation: &o,
            action: a,
            command: &command,
            target: &target,
        };
        for (s, c) in csum.iter_mut().zip(&cfg.constraints) {
            *s += disc * c.step_value(layout, &input);
        }
        let next = bundle.predict_next(&o, &[], a)?;
        dream.push(std::mem::replace(&mut o, next));
        disc *= cfg.gamma;
    }
    let v = bundle.predict_value(&o, &[])?;
    dream.push(o);
    let ret = kernel::finish(reward_sum, disc, v, &csum, cfg.lambda);
    let mut decision = command.to_vec();
    decision.extend_from_slice(actions);
    let mut c = Candidate::new(decision, ret, csum, &cfg.constraints, Source::Gaussian);
    c.dream = Some(dream);
    Ok(c)
}

/// `count` seeded draws from `dist`, clamped to `bounds`. Draw `j` of
/// iteration `iteration` uses its own stream, so the set does not depend on
/// evaluation order.
pub fn sample_gaussian_trajs(
    dist: &PlanDistribution,
    count: usize,
    bounds: &DecisionBounds,
    seed: u64,
    iteration: u64,
) -> Vec<Vec<f64>> {
    (0..count as u64)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[iteration, STREAM_GAUSSIAN, j]));
            let mut d: Vec<f64> = dist
                .mean
                .iter()
                .zip(&dist.std)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + s * z
                })
                .collect();
            bounds.clamp(&mut d);
            d
        })
        .collect()
}

const STREAM_GAUSSIAN: u64 = 0;
const STREAM_POLICY: u64 = 1;
const STREAM_EXTRACT: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chosen {
    /// Mean (or draw) of the final distribution, feasible.
    Distribution,
    /// Best feasible candidate seen; the distribution's plan was infeasible.
    BestFeasible,
    /// Nothing feasible anywhere: minimum-violation candidate.
    MinimumViolation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    /// Best feasible return seen after each iteration.
    pub best_return: Vec<Option<f64>>,
    pub feasible_fraction: Vec<f64>,
    pub chosen: Chosen,
    /// Best candidate seen, with its dream.
    pub best: Candidate,
    /// Candidate the command and first action were read from, with its dream.
    pub plan: Candidate,
    /// Per-iteration candidate pools, when recording.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Vec<Candidate>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutput {
    pub command: Twist,
    pub action: Vec<f64>,
    pub feasible: bool,
    pub warm: PlanDistribution,
    pub final_distribution: PlanDistribution,
    pub diagnostics: PlanDiagnostics,
}

enum Engine {
    F64(Kernel<f64>),
    F32(Kernel<f32>),
}

impl Engine {
    fn rollout(&mut self, spec: &RolloutSpec, decisions: &mut [Vec<f64>], actions: Actions, record: bool) -> Scored {
        match self {
            Engine::F64(k) => k.rollout(spec, decisions, actions, record),
            Engine::F32(k) => k.rollout(spec, decisions, actions, record),
        }
    }

    fn act(&mut self, obs: &[f64]) -> Vec<f64> {
        match self {
            Engine::F64(k) => k.act(obs),
            Engine::F32(k) => k.act(obs),
        }
    }
}

fn rollout_spec<'a>(cfg: &'a PlannerConfig, observation: &'a [f64], target: [f64; 3]) -> RolloutSpec<'a> {
    RolloutSpec {
        observation,
        target,
        horizon: cfg.horizon,
        gamma: cfg.gamma,
        lambda: cfg.lambda,
        constraints: &cfg.constraints,
    }
}

fn expect_nlm(bundle: &DreamerBundle) -> Result<()> {
    if bundle.variant != Variant::Nlm {
        return Err(Error::Variant {
            expected: "nlm".into(),
            got: bundle.variant.to_string(),
        });
    }
    Ok(())
}

/// Planner bound to one frozen bundle. Holds inference copies and scratch
/// buffers; the bundle itself is never modified.
pub struct Planner {
    cfg: PlannerConfig,
    layout: ObsLayout,
    action_bound: f64,
    engine: Engine,
    record: bool,
}

impl Planner {
    pub fn new(bundle: &DreamerBundle, cfg: PlannerConfig) -> Result<Self> {
        expect_nlm(bundle)?;
        let layout = bundle.layout();
        cfg.validate(layout)?;
        let engine = match cfg.precision {
            Precision::F64 => Engine::F64(Kernel::new(bundle)),
            Precision::F32 => Engine::F32(Kernel::new(bundle)),
        };
        Ok(Self {
            action_bound: bundle.dims.action_bound,
            layout,
            engine,
            cfg,
            record: false,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    /// Keep every iteration's candidate pool (with dreams) in the diagnostics.
    pub fn set_record_candidates(&mut self, on: bool) {
        self.record = on;
    }

    pub fn decision_dim(&self) -> usize {
        self.cfg.decision_dim(self.layout.joints)
    }

    pub fn bounds(&self, target: [f64; 3]) -> DecisionBounds {
        DecisionBounds {
            target,
            command_deviation: self.cfg.command_deviation,
            action_bound: self.action_bound,
        }
    }

    fn check_observation(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.layout.dim() {
            return Err(Error::shape("planner observation", self.layout.dim(), obs.len()));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("planner observation".into()));
        }
        Ok(())
    }

    fn candidates(&self, decisions: Vec<Vec<f64>>, scored: Scored, source: Source) -> Vec<Candidate> {
        let mut dreams = scored.dreams.map(|d| d.into_iter());
        decisions
            .into_iter()
            .zip(scored.returns)
            .zip(scored.constraints)
            .map(|((d, r), c)| {
                let mut cand = Candidate::new(d, r, c, &self.cfg.constraints, source);
                cand.dream = dreams.as_mut().and_then(|it| it.next());
                cand
            })
            .collect()
    }

    /// Scores given decision vectors in one batch.
    pub fn score(
        &mut self,
        observation: &[f64],
        target: [f64; 3],
        decisions: Vec<Vec<f64>>,
        record: bool,
    ) -> Result<Vec<Candidate>> {
        self.check_observation(observation)?;
        let dim = self.decision_dim();
        if let Some(d) = decisions.iter().find(|d| d.len() != dim) {
            return Err(Error::shape("decision vector", dim, d.len()));
        }
        Ok(self.score_unchecked(observation, target, decisions, record, Source::Gaussian))
    }

    fn score_unchecked(
        &mut self,
        obs: &[f64],
        target: [f64; 3],
        mut decisions: Vec<Vec<f64>>,
        record: bool,
        source: Source,
    ) -> Vec<Candidate> {
        if decisions.is_empty() {
            return Vec::new();
        }
        let spec = rollout_spec(&self.cfg, obs, target);
        let scored = self.engine.rollout(&spec, &mut decisions, Actions::Given, record);
        self.candidates(decisions, scored, source)
    }

    /// `count` policy rollouts: candidate 0 is the deterministic `π_θ`
    /// rollout at `ν_tgt`, the rest add seeded action and command jitter.
    pub fn sample_policy_trajs(
        &mut self,
        observation: &[f64],
        target: [f64; 3],
        count: usize,
        seed: u64,
        iteration: u64,
    ) -> Result<Vec<Candidate>> {
        self.check_observation(observation)?;
        Ok(self.policy_trajs(observation, target, count, seed, iteration))
    }

    fn policy_trajs(
        &mut self,
        obs: &[f64],
        target: [f64; 3],
        count: usize,
        seed: u64,
        iteration: u64,
    ) -> Vec<Candidate> {
        if count == 0 {
            return Vec::new();
        }
        let dim = self.decision_dim();
        let hk = dim - 3;
        let bounds = self.bounds(target);
        let mut decisions = Vec::with_capacity(count);
        let mut jitter = Vec::with_capacity(count);
        for j in 0..count as u64 {
            let mut d = vec![0.0; dim];
            d[..3].copy_from_slice(&target);
            if j == 0 {
                jitter.push(None);
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[iteration, STREAM_POLICY, j]));
                for i in 0..3 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    d[i] += self.cfg.policy_command_jitter[i] * z;
                }
                bounds.clamp(&mut d);
                let e: Vec<f64> = (0..hk)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        self.cfg.policy_action_jitter * z
                    })
                    .collect();
                jitter.push(Some(e));
            }
            decisions.push(d);
        }
        let spec = rollout_spec(&self.cfg, obs, target);
        let scored = self
            .engine
            .rollout(&spec, &mut decisions, Actions::Policy(&jitter), self.record);
        self.candidates(decisions, scored, Source::Policy)
    }

    /// Initial distribution: mean at the deterministic policy rollout and
    /// `ν_tgt`, spread from the configured initial scales.
    pub fn initial_distribution(&mut self, observation: &[f64], target: [f64; 3]) -> Result<PlanDistribution> {
        self.check_observation(observation)?;
        let det = self.policy_trajs(observation, target, 1, 0, 0).remove(0);
        Ok(self.distribution_around(det.decision))
    }

    fn distribution_around(&self, mean: Vec<f64>) -> PlanDistribution {
        let mut std = vec![self.cfg.init_std_action.max(self.cfg.std_min); mean.len()];
        for i in 0..3 {
            std[i] = self.cfg.init_std_command[i].max(self.cfg.std_min);
        }
        PlanDistribution { mean, std }
    }

    /// One control step of the constrained MPPI loop.
    pub fn plan(
        &mut self,
        observation: &[f64],
        target: Twist,
        warm: Option<&PlanDistribution>,
        seed: u64,
    ) -> Result<PlanOutput> {
        self.check_observation(observation)?;
        let target = target.to_array();
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("planner target".into()));
        }
        let cfg = self.cfg.clone();
        let dim = self.decision_dim();
        let bounds = self.bounds(target);
        let mut dist = match warm {
            Some(w) => {
                w.validate(dim, cfg.std_min)?;
                let mut w = w.clone();
                bounds.clamp(&mut w.mean);
                w
            }
            None => self.initial_distribution(observation, target)?,
        };

        let mut best: Option<Candidate> = None;
        let mut best_feasible: Option<Candidate> = None;
        let mut best_return = Vec::with_capacity(cfg.iterations);
        let mut feasible_fraction = Vec::with_capacity(cfg.iterations);
        let mut pools = self.record.then(Vec::new);
        for i in 0..cfg.iterations as u64 {
            let mut pool = self.policy_trajs(observation, target, cfg.policy_samples, seed, i);
            let draws = sample_gaussian_trajs(&dist, cfg.samples, &bounds, seed, i);
            pool.extend(self.score_unchecked(observation, target, draws, self.record, Source::Gaussian));
            if let Some(b) = &best {
                let mut c = b.clone();
                c.source = Source::Carryover;
                pool.push(c);
            }
            let upd = elite_update(&pool, &cfg, &dist)?;
            dist = upd.distribution;

            feasible_fraction.push(pool.iter().filter(|c| c.feasible).count() as f64 / pool.len() as f64);
            let top = (0..pool.len())
                .min_by(|&a, &b| rank(&pool[a], &pool[b]).then(a.cmp(&b)))
                .expect("nonempty pool");
            if best.as_ref().map_or(true, |b| rank(&pool[top], b) == Ordering::Less) {
                best = Some(pool[top].clone());
            }
            if let Some(b) = best.as_ref().filter(|b| b.feasible) {
                if best_feasible.as_ref().map_or(true, |f| b.ret > f.ret) {
                    best_feasible = Some(b.clone());
                }
            }
            best_return.push(best_feasible.as_ref().map(|b| b.ret));
            if let Some(p) = pools.as_mut() {
                p.push(pool);
            }
        }
        let best = best.expect("at least one iteration");

        let mut mean = dist.mean.clone();
        bounds.clamp(&mut mean);
        let mut lanes = vec![mean, best.decision.clone()];
        if cfg.extraction == Extraction::Sample {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[cfg.iterations as u64, STREAM_EXTRACT]));
            let mut d: Vec<f64> = dist
                .mean
                .iter()
                .zip(&dist.std)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + s * z
                })
                .collect();
            bounds.clamp(&mut d);
            lanes.push(d);
        }
        let mut rescored = self
            .score_unchecked(observation, target, lanes, true, Source::Mean)
            .into_iter();
        let mean_plan = rescored.next().expect("mean lane");
        let best = Candidate {
            dream: rescored.next().expect("best lane").dream,
            ..best
        };
        let dist_plan = match rescored.next() {
            Some(c) => Candidate {
                source: Source::Sample,
                ..c
            },
            None => mean_plan.clone(),
        };

        let (chosen, plan) = if dist_plan.feasible {
            (Chosen::Distribution, dist_plan)
        } else if best.feasible {
            (Chosen::BestFeasible, best.clone())
        } else if dist_plan.violation < best.violation {
            (Chosen::MinimumViolation, dist_plan)
        } else {
            (Chosen::MinimumViolation, best.clone())
        };

        let last = mean_plan.dream.as_ref().and_then(|d| d.last()).expect("recorded dream");
        let warm = self.shift(&dist, last);
        let k = self.layout.joints;
        Ok(PlanOutput {
            command: Twist::from_array(plan.command()),
            action: plan.actions()[..k].to_vec(),
            feasible: plan.feasible,
            warm,
            final_distribution: dist,
            diagnostics: PlanDiagnostics {
                best_return,
                feasible_fraction,
                chosen,
                best,
                plan,
                candidates: pools,
            },
        })
    }

    /// Receding-horizon shift of `dist`: drop the first action, append
    /// `π_θ` at the last dreamed observation of the distribution mean, keep
    /// the command slice.
    fn shift(&mut self, dist: &PlanDistribution, last_obs: &[f64]) -> PlanDistribution {
        let k = self.layout.joints;
        let tail = self.engine.act(last_obs);
        let mut mean = dist.mean.clone();
        mean.copy_within(3 + k.., 3);
        let n = mean.len();
        mean[n - k..].copy_from_slice(&tail);
        let mut std = dist.std.clone();
        std.copy_within(3 + k.., 3);
        std[n - k..].fill(self.cfg.init_std_action.max(self.cfg.std_min));
        PlanDistribution { mean, std }
    }
}

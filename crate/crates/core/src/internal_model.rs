//! Velocity estimator and Dreamer bundle.
//!
//! Three wirings share the same components:
//!
//! * `Nlm`: `õ_{k+1} = õ_k + d(õ_k, a_k)`, `a_k = π(õ_k)`.
//! * `Plm`: each dream step encodes the rolling window of the last `M`
//!   observations (real history first, dreamed ones appended as the dream
//!   advances) into `z_k = α(window)` and `v_k = v_φ(window)`, then
//!   `a_k = π(õ_k, z_k, v_k)` and `õ_{k+1} = õ_k + d(õ_k, z_k, v_k, a_k)`.
//! * `Flm`: the `Plm` dream with `M = H`, summarized as
//!   `(α(õ_{t+1..t+H}), α(o_{t−H+1..t}))`.
//!
//! Dynamics nets predict the observation delta. The command slice of every
//! dreamed observation is reset to the seed's command.

use std::collections::VecDeque;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::ObsLayout;
use crate::error::{Error, Result};
use crate::tensornet::checkpoint::{encode_mlp, Reader};
use crate::tensornet::{layer_sizes, Activation, Batch, Mlp, DEFAULT_HIDDEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Nlm,
    Plm,
    Flm,
}

impl Variant {
    fn tag(self) -> u8 {
        match self {
            Variant::Nlm => 0,
            Variant::Plm => 1,
            Variant::Flm => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Variant::Nlm),
            1 => Some(Variant::Plm),
            2 => Some(Variant::Flm),
            _ => None,
        }
    }

    pub fn has_encoder(self) -> bool {
        !matches!(self, Variant::Nlm)
    }

    /// History length used by the velocity estimator and encoder.
    pub fn default_history(self, horizon: usize) -> usize {
        match self {
            Variant::Nlm => 1,
            Variant::Plm => 6,
            Variant::Flm => horizon,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Nlm => "nlm",
            Variant::Plm => "plm",
            Variant::Flm => "flm",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nlm" => Ok(Variant::Nlm),
            "plm" => Ok(Variant::Plm),
            "flm" => Ok(Variant::Flm),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DreamerDims {
    pub joints: usize,
    pub horizon: usize,
    pub history: usize,
    pub latent: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub action_bound: f64,
    /// Multiplier applied to the value head's output.
    pub value_scale: f64,
    pub actor_inputs: ActorInputs,
}

/// What the expert actor sees besides the observation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorInputs {
    /// `v̂` plus the variant's dreams and latents.
    #[default]
    InternalModel,
    /// The observation alone: the no-internal-model baseline.
    Observation,
}

impl DreamerDims {
    pub fn new(variant: Variant, joints: usize, horizon: usize, action_bound: f64) -> Self {
        Self {
            joints,
            horizon,
            history: variant.default_history(horizon),
            latent: 16,
            hidden: DEFAULT_HIDDEN.to_vec(),
            activation: Activation::Tanh,
            action_bound,
            value_scale: 1.0,
            actor_inputs: ActorInputs::InternalModel,
        }
    }

    pub fn obs_dim(&self) -> usize {
        3 * self.joints + 6
    }
}

/// `v_φ`: flattened observation history → base twist estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityEstimator {
    pub net: Mlp,
    pub history: usize,
}

impl VelocityEstimator {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        history: usize,
        hidden: &[usize],
        act: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            net: Mlp::new(&layer_sizes(obs_dim * history, hidden, 3), act, rng),
            history,
        }
    }

    pub fn estimate(&self, history: &ObservationHistory) -> Result<[f64; 3]> {
        if history.is_empty() {
            return Err(Error::History("velocity estimate from an empty history".into()));
        }
        self.estimate_window(&history.window_flat(self.history))
    }

    pub fn estimate_window(&self, flat_window: &[f64]) -> Result<[f64; 3]> {
        let v = self.net.forward(flat_window)?;
        Ok([v[0], v[1], v[2]])
    }
}

/// The last `capacity` observations, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationHistory {
    capacity: usize,
    buf: VecDeque<Vec<f64>>,
}

impl ObservationHistory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "history capacity must be positive");
        Self {
            capacity,
            buf: VecDeque::with_capacity(capacity),
        }
    }

    pub fn from_observations<S: AsRef<[f64]>>(capacity: usize, obs: &[S]) -> Self {
        let mut h = Self::new(capacity);
        for o in obs {
            h.push(o.as_ref().to_vec());
        }
        h
    }

    pub fn push(&mut self, obs: Vec<f64>) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(obs);
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill_count(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn latest(&self) -> Option<&[f64]> {
        self.buf.back().map(Vec::as_slice)
    }

    /// The last `m` observations oldest first, left-padded with the earliest
    /// stored observation. Panics on an empty history.
    pub fn window(&self, m: usize) -> Vec<&[f64]> {
        let earliest = self.buf.front().expect("window of an empty history");
        let have = self.buf.len().min(m);
        let mut out = Vec::with_capacity(m);
        out.extend(std::iter::repeat(earliest.as_slice()).take(m - have));
        out.extend(self.buf.iter().skip(self.buf.len() - have).map(Vec::as_slice));
        out
    }

    pub fn window_flat(&self, m: usize) -> Vec<f64> {
        self.window(m).concat()
    }
}

/// Encoder input at one dream step: the last `m` entries of `real ++ dreamed`.
pub fn rolling_window<'a>(real: &[&'a [f64]], dreamed: &'a [Vec<f64>], m: usize) -> Vec<&'a [f64]> {
    let total = real.len() + dreamed.len();
    let skip = total.saturating_sub(m);
    real.iter()
        .copied()
        .chain(dreamed.iter().map(Vec::as_slice))
        .skip(skip)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DreamTrajectory {
    /// `õ_t ..= õ_{t+H}`; entry 0 is the seed observation.
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// `z_t` for the latent variants.
    pub latent: Option<Vec<f64>>,
}

impl DreamTrajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// `õ_{t+1} ..= õ_{t+H}` flattened.
    pub fn future_flat(&self) -> Vec<f64> {
        self.observations[1..].concat()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DreamerBundle {
    pub variant: Variant,
    pub dims: DreamerDims,
    pub dynamics: Mlp,
    pub policy: Mlp,
    pub reward: Mlp,
    pub value: Mlp,
    pub encoder: Option<Mlp>,
}

impl DreamerBundle {
    pub fn new<R: Rng + ?Sized>(variant: Variant, dims: DreamerDims, rng: &mut R) -> Result<Self> {
        let p = dims.obs_dim();
        let k = dims.joints;
        let c = cond_dim(variant, &dims);
        let h = &dims.hidden;
        let act = dims.activation;
        let dynamics = Mlp::new(&layer_sizes(p + c + k, h, p), act, rng);
        let policy = Mlp::new(&layer_sizes(p + c, h, k), act, rng);
        let reward = Mlp::new(&layer_sizes(p + c + k, h, 1), act, rng);
        let value = Mlp::new(&layer_sizes(p + c, h, 1), act, rng);
        let encoder = variant
            .has_encoder()
            .then(|| Mlp::new(&layer_sizes(p * dims.history, h, dims.latent), act, rng));
        let b = Self {
            variant,
            dims,
            dynamics,
            policy,
            reward,
            value,
            encoder,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn layout(&self) -> ObsLayout {
        ObsLayout::new(self.dims.joints)
    }

    /// Width of the `(z, v)` conditioning block (0 for NLM).
    pub fn cond_dim(&self) -> usize {
        cond_dim(self.variant, &self.dims)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if d.horizon == 0 {
            return Err(Error::InvalidConfig("dream horizon must be at least 1".into()));
        }
        if d.history == 0 {
            return Err(Error::InvalidConfig("history length must be at least 1".into()));
        }
        if self.variant == Variant::Flm && d.history != d.horizon {
            return Err(Error::InvalidConfig(format!(
                "FLM requires history == horizon, got {} and {}",
                d.history, d.horizon
            )));
        }
        let p = d.obs_dim();
        let k = d.joints;
        let c = self.cond_dim();
        let check = |name: &str, net: &Mlp, input: usize, output: usize| -> Result<()> {
            if net.input_dim() != input {
                return Err(Error::shape(format!("{name} input"), input, net.input_dim()));
            }
            if net.output_dim() != output {
                return Err(Error::shape(format!("{name} output"), output, net.output_dim()));
            }
            Ok(())
        };
        check("dynamics", &self.dynamics, p + c + k, p)?;
        check("policy", &self.policy, p + c, k)?;
        check("reward", &self.reward, p + c + k, 1)?;
        check("value", &self.value, p + c, 1)?;
        match (self.variant.has_encoder(), &self.encoder) {
            (true, Some(e)) => check("encoder", e, p * d.history, d.latent)?,
            (false, None) => {}
            (true, None) => return Err(Error::InvalidConfig("latent variant without encoder".into())),
            (false, Some(_)) => return Err(Error::InvalidConfig("NLM bundle with an encoder".into())),
        }
        Ok(())
    }

    fn expect_variant(&self, allowed: &[Variant]) -> Result<()> {
        if allowed.contains(&self.variant) {
            Ok(())
        } else {
            Err(Error::Variant {
                expected: allowed.iter().map(Variant::to_string).collect::<Vec<_>>().join("|"),
                got: self.variant.to_string(),
            })
        }
    }

    pub fn clamp_action(&self, a: &mut [f64]) {
        let b = self.dims.action_bound;
        a.iter_mut().for_each(|x| *x = x.clamp(-b, b));
    }

    /// `π(obs ⊕ cond)`, clamped to the action bound.
    pub fn act(&self, obs: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.policy.forward(&concat(&[obs, cond]))?;
        self.clamp_action(&mut a);
        Ok(a)
    }

    /// `obs + d(obs ⊕ cond ⊕ action)` with the command slice restored.
    pub fn predict_next(&self, obs: &[f64], cond: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let delta = self.dynamics.forward(&concat(&[obs, cond, action]))?;
        let mut next: Vec<f64> = obs.iter().zip(&delta).map(|(o, d)| o + d).collect();
        let cmd = self.layout().command();
        next[cmd.clone()].copy_from_slice(&obs[cmd]);
        Ok(next)
    }

    pub fn predict_reward(&self, obs: &[f64], cond: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.reward.forward(&concat(&[obs, cond, action]))?[0])
    }

    pub fn predict_value(&self, obs: &[f64], cond: &[f64]) -> Result<f64> {
        Ok(self.value.forward(&concat(&[obs, cond]))?[0] * self.dims.value_scale)
    }

    pub fn encode(&self, window: &[&[f64]]) -> Result<Vec<f64>> {
        let enc = self.encoder.as_ref().ok_or_else(|| Error::Variant {
            expected: "plm|flm".into(),
            got: self.variant.to_string(),
        })?;
        enc.forward(&window.concat())
    }

    /// `z ⊕ v` for a flattened history window; empty for NLM.
    pub fn condition(&self, velocity: &VelocityEstimator, flat_window: &[f64]) -> Result<Vec<f64>> {
        match &self.encoder {
            Some(enc) => {
                let mut c = enc.forward(flat_window)?;
                c.extend(velocity.estimate_window(flat_window)?);
                Ok(c)
            }
            None => Ok(Vec::new()),
        }
    }

    /// No-latent dream of `horizon` steps from `obs`.
    pub fn nlm_rollout(&self, obs: &[f64], horizon: usize) -> Result<DreamTrajectory> {
        self.expect_variant(&[Variant::Nlm])?;
        if obs.len() != self.dims.obs_dim() {
            return Err(Error::shape("seed observation", self.dims.obs_dim(), obs.len()));
        }
        let mut observations = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        observations.push(obs.to_vec());
        for k in 0..horizon {
            let o = &observations[k];
            let a = self.act(o, &[])?;
            let next = self.predict_next(o, &[], &a)?;
            actions.push(a);
            observations.push(next);
        }
        Ok(DreamTrajectory {
            observations,
            actions,
            latent: None,
        })
    }

    /// Latent dream of `horizon` steps seeded by the newest entry of `history`.
    pub fn plm_rollout(
        &self,
        history: &ObservationHistory,
        velocity: &VelocityEstimator,
        horizon: usize,
    ) -> Result<DreamTrajectory> {
        self.expect_variant(&[Variant::Plm, Variant::Flm])?;
        let m = self.dims.history;
        if history.is_empty() {
            return Err(Error::History("latent rollout needs at least one observation".into()));
        }
        if history.capacity() < m {
            return Err(Error::History(format!(
                "history holds {} observations, bundle needs {m}",
                history.capacity()
            )));
        }
        if velocity.history != m {
            return Err(Error::shape("velocity estimator history", m, velocity.history));
        }
        let real = history.window(m);
        let seed = *real.last().unwrap();
        if seed.len() != self.dims.obs_dim() {
            return Err(Error::shape("seed observation", self.dims.obs_dim(), seed.len()));
        }
        let mut observations = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        observations.push(seed.to_vec());
        let z0 = self.encode(&real)?;
        for k in 0..horizon {
            let (z, v) = if k == 0 {
                let v = velocity.estimate_window(&real.concat())?;
                (z0.clone(), v)
            } else {
                let window = rolling_window(&real, &observations[1..=k], m);
                let flat = window.concat();
                (self.encode(&window)?, velocity.estimate_window(&flat)?)
            };
            let cond = concat(&[&z, &v]);
            let o = &observations[k];
            let a = self.act(o, &cond)?;
            let next = self.predict_next(o, &cond, &a)?;
            actions.push(a);
            observations.push(next);
        }
        Ok(DreamTrajectory {
            observations,
            actions,
            latent: Some(z0),
        })
    }

    /// `(α(õ_{t+1..t+H}), α(o_{t−H+1..t}))`.
    pub fn flm_encode(
        &self,
        history: &ObservationHistory,
        velocity: &VelocityEstimator,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.expect_variant(&[Variant::Flm])?;
        let h = self.dims.horizon;
        if self.dims.history != h {
            return Err(Error::InvalidConfig(format!(
                "FLM requires history == horizon, got {} and {h}",
                self.dims.history
            )));
        }
        let traj = self.plm_rollout(history, velocity, h)?;
        let future: Vec<&[f64]> = traj.observations[1..].iter().map(Vec::as_slice).collect();
        let y_future = self.encode(&future)?;
        let y_past = self.encode(&history.window(h))?;
        Ok((y_future, y_past))
    }

    pub fn actor_layout(&self) -> ActorLayout {
        let p = self.dims.obs_dim();
        if self.dims.actor_inputs == ActorInputs::Observation {
            return ActorLayout {
                observation: 0..p,
                velocity: p..p,
                dream: p..p,
                latent: p..p,
            };
        }
        let h = self.dims.horizon;
        let q = self.dims.latent;
        let dream = match self.variant {
            Variant::Nlm | Variant::Plm => h * p,
            Variant::Flm => 0,
        };
        let latent = match self.variant {
            Variant::Nlm => 0,
            Variant::Plm => q,
            Variant::Flm => 2 * q,
        };
        ActorLayout {
            observation: 0..p,
            velocity: p..p + 3,
            dream: p + 3..p + 3 + dream,
            latent: p + 3 + dream..p + 3 + dream + latent,
        }
    }

    /// `[o_t ⊕ v̂_t ⊕ y_t]` for the newest observation in `history`.
    pub fn actor_input(&self, history: &ObservationHistory, velocity: &VelocityEstimator) -> Result<Vec<f64>> {
        let o = history
            .latest()
            .ok_or_else(|| Error::History("actor input from an empty history".into()))?;
        if self.dims.actor_inputs == ActorInputs::Observation {
            return Ok(o.to_vec());
        }
        let v = velocity.estimate(history)?;
        let mut out = Vec::with_capacity(self.actor_layout().dim());
        out.extend_from_slice(o);
        out.extend_from_slice(&v);
        match self.variant {
            Variant::Nlm => {
                let traj = self.nlm_rollout(o, self.dims.horizon)?;
                out.extend(traj.future_flat());
            }
            Variant::Plm => {
                let traj = self.plm_rollout(history, velocity, self.dims.horizon)?;
                out.extend(traj.future_flat());
                out.extend(traj.latent.expect("latent rollout sets z_t"));
            }
            Variant::Flm => {
                let (f, p) = self.flm_encode(history, velocity)?;
                out.extend(f);
                out.extend(p);
            }
        }
        Ok(out)
    }
}

impl DreamerBundle {
    /// [`DreamerBundle::actor_input`] over many histories. NLM bundles run
    /// the dream as lane-batched passes, bit-identical to the per-sample
    /// path; latent variants fall back to it.
    pub fn actor_input_batch(
        &self,
        histories: &[&ObservationHistory],
        velocity: &VelocityEstimator,
    ) -> Result<Vec<Vec<f64>>> {
        if self.variant != Variant::Nlm || self.dims.actor_inputs == ActorInputs::Observation {
            return histories.iter().map(|h| self.actor_input(h, velocity)).collect();
        }
        if histories.is_empty() {
            return Ok(Vec::new());
        }
        let n = histories.len();
        let m = velocity.history;
        let mut obs = Vec::with_capacity(n);
        let mut windows = Vec::with_capacity(n);
        for h in histories {
            obs.push(
                h.latest()
                    .ok_or_else(|| Error::History("actor input from an empty history".into()))?,
            );
            windows.push(h.window_flat(m));
        }
        let v = velocity.net.forward_batch(&Batch::from_samples(&windows)?)?;
        let v = v.output();
        let p = self.dims.obs_dim();
        let k = self.dims.joints;
        let bound = self.dims.action_bound;
        let cmd = self.layout().command();
        let mut cur = Batch::from_samples(&obs)?;
        let mut out: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut x = Vec::with_capacity(self.actor_layout().dim());
                x.extend_from_slice(obs[j]);
                x.extend((0..3).map(|f| v.get(f, j)));
                x
            })
            .collect();
        for _ in 0..self.dims.horizon {
            let a = self.policy.forward_batch(&cur)?;
            let mut sa = Batch::zeros(p + k, n);
            for f in 0..p {
                sa.feature_mut(f).copy_from_slice(cur.feature(f));
            }
            for f in 0..k {
                for (o, &x) in sa.feature_mut(p + f).iter_mut().zip(a.output().feature(f)) {
                    *o = x.clamp(-bound, bound);
                }
            }
            let d = self.dynamics.forward_batch(&sa)?;
            let d = d.output();
            let mut next = Batch::zeros(p, n);
            for f in 0..p {
                if cmd.contains(&f) {
                    next.feature_mut(f).copy_from_slice(cur.feature(f));
                } else {
                    for ((o, &x), &dx) in next.feature_mut(f).iter_mut().zip(cur.feature(f)).zip(d.feature(f)) {
                        *o = x + dx;
                    }
                }
            }
            for (j, x) in out.iter_mut().enumerate() {
                x.extend((0..p).map(|f| next.get(f, j)));
            }
            cur = next;
        }
        Ok(out)
    }
}

/// Index map of the expert actor's input vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActorLayout {
    pub observation: Range<usize>,
    pub velocity: Range<usize>,
    pub dream: Range<usize>,
    pub latent: Range<usize>,
}

impl ActorLayout {
    pub fn dim(&self) -> usize {
        self.latent.end
    }
}

fn cond_dim(variant: Variant, dims: &DreamerDims) -> usize {
    if variant.has_encoder() {
        dims.latent + 3
    } else {
        0
    }
}

pub(crate) fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut v = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        v.extend_from_slice(p);
    }
    v
}

/// Dreamer bundle plus velocity estimator: everything learned besides the
/// expert pair.
#[derive(Clone, Debug, PartialEq)]
pub struct InternalModel {
    pub dreamer: DreamerBundle,
    pub velocity: VelocityEstimator,
}

const BUNDLE_MAGIC: &[u8; 8] = b"DRMRBNDL";
const BUNDLE_VERSION: u32 = 2;

impl InternalModel {
    pub fn new<R: Rng + ?Sized>(variant: Variant, dims: DreamerDims, rng: &mut R) -> Result<Self> {
        let velocity = VelocityEstimator::new(dims.obs_dim(), dims.history, &dims.hidden, dims.activation, rng);
        let dreamer = DreamerBundle::new(variant, dims, rng)?;
        Ok(Self { dreamer, velocity })
    }

    /// Binary layout: magic `DRMRBNDL`, `u32` version, `u8` variant,
    /// `u32` joints/horizon/history/latent, `f64` action bound and value
    /// scale, `u8` activation, `u8` actor inputs (absent in version 1),
    /// `u32` hidden count and widths, then the networks in the order
    /// dynamics, policy, reward, value, [encoder], velocity.
    pub fn encode(&self) -> Vec<u8> {
        let d = &self.dreamer.dims;
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        out.push(self.dreamer.variant.tag());
        for v in [d.joints, d.horizon, d.history, d.latent] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&d.action_bound.to_le_bytes());
        out.extend_from_slice(&d.value_scale.to_le_bytes());
        out.push(match d.activation {
            Activation::Tanh => 0,
            Activation::Elu => 1,
        });
        out.push(match d.actor_inputs {
            ActorInputs::InternalModel => 0,
            ActorInputs::Observation => 1,
        });
        out.extend_from_slice(&(d.hidden.len() as u32).to_le_bytes());
        for &h in &d.hidden {
            out.extend_from_slice(&(h as u32).to_le_bytes());
        }
        let b = &self.dreamer;
        for net in [&b.dynamics, &b.policy, &b.reward, &b.value] {
            encode_mlp(net, &mut out);
        }
        if let Some(e) = &b.encoder {
            encode_mlp(e, &mut out);
        }
        encode_mlp(&self.velocity.net, &mut out);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.bytes(8)? != BUNDLE_MAGIC {
            return Err(Error::Checkpoint("bad bundle magic".into()));
        }
        let version = r.u32()?;
        if version != 1 && version != BUNDLE_VERSION {
            return Err(Error::Checkpoint(format!("unsupported bundle version {version}")));
        }
        let tag = r.u8()?;
        let variant = Variant::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("unknown variant tag {tag}")))?;
        let joints = r.u32()? as usize;
        let horizon = r.u32()? as usize;
        let history = r.u32()? as usize;
        let latent = r.u32()? as usize;
        let action_bound = r.f64()?;
        let value_scale = r.f64()?;
        let activation = match r.u8()? {
            0 => Activation::Tanh,
            1 => Activation::Elu,
            t => return Err(Error::Checkpoint(format!("unknown activation tag {t}"))),
        };
        let actor_inputs = match if version == 1 { 0 } else { r.u8()? } {
            0 => ActorInputs::InternalModel,
            1 => ActorInputs::Observation,
            t => return Err(Error::Checkpoint(format!("unknown actor input tag {t}"))),
        };
        let n_hidden = r.u32()? as usize;
        let hidden = (0..n_hidden)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let dynamics = r.mlp()?;
        let policy = r.mlp()?;
        let reward = r.mlp()?;
        let value = r.mlp()?;
        let encoder = if variant.has_encoder() { Some(r.mlp()?) } else { None };
        let velocity = r.mlp()?;
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after bundle".into()));
        }
        let dims = DreamerDims {
            joints,
            horizon,
            history,
            latent,
            hidden,
            activation,
            action_bound,
            value_scale,
            actor_inputs,
        };
        if velocity.input_dim() != dims.obs_dim() * history || velocity.output_dim() != 3 {
            return Err(Error::Checkpoint(
                "velocity estimator does not match bundle dims".into(),
            ));
        }
        let dreamer = DreamerBundle {
            variant,
            dims,
            dynamics,
            policy,
            reward,
            value,
            encoder,
        };
        dreamer.validate()?;
        Ok(Self {
            dreamer,
            velocity: VelocityEstimator { net: velocity, history },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

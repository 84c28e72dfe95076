use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::internal_model::InternalModel;
use crate::tensornet::{AdamConfig, AdamState, Batch, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub learning_rate: f64,
    pub minibatch_size: usize,
    /// Passes over the rollout buffer per training iteration.
    pub epochs: usize,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            minibatch_size: 64,
            epochs: 1,
        }
    }
}

/// One transition's supervised targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedSample {
    /// Flattened observation history ending at `observation`.
    pub window: Vec<f64>,
    pub observation: Vec<f64>,
    /// Action the environment received.
    pub action: Vec<f64>,
    pub next_observation: Vec<f64>,
    pub reward: f64,
    pub twist: [f64; 3],
    /// Expert mean action at this state, clamped to the action bound.
    pub expert_action: Vec<f64>,
    /// Expert critic output (value-head units).
    pub expert_value: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SupervisedLosses {
    pub dynamics: f64,
    pub reward: f64,
    pub velocity: f64,
    pub policy: f64,
    pub value: f64,
}

impl SupervisedLosses {
    fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("dynamics", self.dynamics),
            ("reward", self.reward),
            ("velocity", self.velocity),
            ("policy", self.policy),
            ("value", self.value),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct SupervisedOptim {
    pub dynamics: AdamState,
    pub policy: AdamState,
    pub reward: AdamState,
    pub value: AdamState,
    pub encoder: Option<AdamState>,
    pub velocity: AdamState,
}

impl SupervisedOptim {
    pub fn new(model: &InternalModel, lr: f64) -> Self {
        let cfg = AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        let b = &model.dreamer;
        Self {
            dynamics: AdamState::new(&b.dynamics, cfg),
            policy: AdamState::new(&b.policy, cfg),
            reward: AdamState::new(&b.reward, cfg),
            value: AdamState::new(&b.value, cfg),
            encoder: b.encoder.as_ref().map(|e| AdamState::new(e, cfg)),
            velocity: AdamState::new(&model.velocity.net, cfg),
        }
    }
}

/// Dynamics target: observation delta with a zero command component.
pub fn dynamics_target(model: &InternalModel, obs: &[f64], next: &[f64]) -> Vec<f64> {
    let mut delta: Vec<f64> = next.iter().zip(obs).map(|(n, o)| n - o).collect();
    delta[model.dreamer.layout().command()].fill(0.0);
    delta
}

/// Stacks batches feature-wise (same lane count).
pub(crate) fn stack(parts: &[&Batch]) -> Batch {
    let lanes = parts.first().map_or(0, |b| b.lanes());
    let mut out = Batch::zeros(parts.iter().map(|b| b.features()).sum(), lanes);
    let mut f = 0;
    for b in parts {
        for i in 0..b.features() {
            out.feature_mut(f).copy_from_slice(b.feature(i));
            f += 1;
        }
    }
    out
}

fn batch_of<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Result<Batch> {
    Batch::from_samples(&rows.collect::<Vec<_>>())
}

/// One Adam step on the lane-averaged MSE of `net(input)` against `target`.
/// Returns the pre-step loss and the input gradient of that loss.
pub(crate) fn fit_step(net: &mut Mlp, adam: &mut AdamState, input: &Batch, target: &Batch) -> Result<(f64, Batch)> {
    let trace = net.forward_batch(input)?;
    let y = trace.output();
    if y.features() != target.features() || y.lanes() != target.lanes() {
        return Err(Error::shape("supervised target", y.features(), target.features()));
    }
    let scale = 2.0 / (y.features() * y.lanes()) as f64;
    let mut up = Batch::zeros(y.features(), y.lanes());
    let mut loss = 0.0;
    for f in 0..y.features() {
        for (u, (p, t)) in up
            .feature_mut(f)
            .iter_mut()
            .zip(y.feature(f).iter().zip(target.feature(f)))
        {
            let e = p - t;
            loss += e * e;
            *u = scale * e;
        }
    }
    loss *= 0.5 * scale;
    let (grads, dx) = net.backward_batch(&trace, &up)?;
    adam.step(net, &grads)?;
    Ok((loss, dx))
}

/// `epochs` passes of shuffled minibatch Adam over the buffer for every
/// internal-model component. The encoder (latent variants) learns through
/// the input gradients of the four Dreamer heads with respect to `z`.
pub fn supervised_update<R: Rng + ?Sized>(
    model: &mut InternalModel,
    opt: &mut SupervisedOptim,
    samples: &[SupervisedSample],
    cfg: &SupervisedConfig,
    rng: &mut R,
) -> Result<SupervisedLosses> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empty supervised buffer".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut total = SupervisedLosses::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs.max(1) {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size.max(1)) {
            let mb: Vec<&SupervisedSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let l = minibatch_step(model, opt, &mb)?;
            if let Some((name, v)) = l.named().into_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{name} loss {v}")));
            }
            total.dynamics += l.dynamics;
            total.reward += l.reward;
            total.velocity += l.velocity;
            total.policy += l.policy;
            total.value += l.value;
            count += 1.0;
        }
    }
    total.dynamics /= count;
    total.reward /= count;
    total.velocity /= count;
    total.policy /= count;
    total.value /= count;
    Ok(total)
}

fn minibatch_step(
    model: &mut InternalModel,
    opt: &mut SupervisedOptim,
    mb: &[&SupervisedSample],
) -> Result<SupervisedLosses> {
    let n = mb.len();
    let window = batch_of(mb.iter().map(|s| s.window.as_slice()))?;
    let obs = batch_of(mb.iter().map(|s| s.observation.as_slice()))?;
    let action = batch_of(mb.iter().map(|s| s.action.as_slice()))?;
    let twist = batch_of(mb.iter().map(|s| s.twist.as_slice()))?;
    let delta_rows: Vec<Vec<f64>> = mb
        .iter()
        .map(|s| dynamics_target(model, &s.observation, &s.next_observation))
        .collect();
    let delta = Batch::from_samples(&delta_rows)?;
    let mut reward = Batch::zeros(1, n);
    let mut value = Batch::zeros(1, n);
    for (j, s) in mb.iter().enumerate() {
        reward.set(0, j, s.reward);
        value.set(0, j, s.expert_value);
    }
    let bc = batch_of(mb.iter().map(|s| s.expert_action.as_slice()))?;

    let v_trace = model.velocity.net.forward_batch(&window)?;
    let v_hat = v_trace.output().clone();
    let (velocity_loss, _) = fit_step(&mut model.velocity.net, &mut opt.velocity, &window, &twist)?;

    let b = &mut model.dreamer;
    let latent = b.encoder.as_ref().map(|e| e.forward_batch(&window)).transpose()?;
    let p = obs.features();
    let q = latent.as_ref().map_or(0, |t| t.output().features());

    let cond_parts: Vec<&Batch> = match &latent {
        Some(t) => vec![t.output(), &v_hat],
        None => vec![],
    };
    let state_in = stack(&[&[&obs][..], &cond_parts].concat());
    let state_action_in = stack(&[&state_in, &action]);

    let (dynamics_loss, dx_d) = fit_step(&mut b.dynamics, &mut opt.dynamics, &state_action_in, &delta)?;
    let (reward_loss, dx_r) = fit_step(&mut b.reward, &mut opt.reward, &state_action_in, &reward)?;
    let (policy_loss, dx_p) = fit_step(&mut b.policy, &mut opt.policy, &state_in, &bc)?;
    let (value_loss, dx_v) = fit_step(&mut b.value, &mut opt.value, &state_in, &value)?;

    if let (Some(trace), Some(enc), Some(adam)) = (&latent, b.encoder.as_mut(), opt.encoder.as_mut()) {
        let mut dz = Batch::zeros(q, n);
        for i in 0..q {
            let out = dz.feature_mut(i);
            for dx in [&dx_d, &dx_r, &dx_p, &dx_v] {
                for (o, g) in out.iter_mut().zip(dx.feature(p + i)) {
                    *o += g;
                }
            }
        }
        let (grads, _) = enc.backward_batch(trace, &dz)?;
        adam.step(enc, &grads)?;
    }

    Ok(SupervisedLosses {
        dynamics: dynamics_loss,
        reward: reward_loss,
        velocity: velocity_loss,
        policy: policy_loss,
        value: value_loss,
    })
}

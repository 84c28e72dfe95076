use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::supervised::fit_step;
use super::{sample_command, Checkpoint};
use crate::env::{clamp_action, Env, EnvConfig};
use crate::error::Result;
use crate::internal_model::{concat, ObservationHistory};
use crate::seed::derive_seed;
use crate::tensornet::{AdamConfig, AdamState, Batch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    /// Expert-visited states to clone on (0 disables the phase).
    pub states: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    /// Learning rate reached at the end of the last epoch (cosine decay).
    pub final_learning_rate: f64,
    pub episode_steps: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            states: 40_000,
            epochs: 40,
            minibatch_size: 64,
            learning_rate: 3e-3,
            final_learning_rate: 1e-5,
            episode_steps: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub states: usize,
    /// Mean squared action error before each epoch, then after the last.
    pub epoch_losses: Vec<f64>,
}

struct State {
    history: ObservationHistory,
    /// `o ⊕ z ⊕ v`, the cloned policy's input.
    input: Vec<f64>,
}

/// Clones the frozen expert into the bundle's policy on states visited by
/// the stochastic expert. Expert targets are recomputed every epoch because
/// the expert's input contains dreams rolled out by the policy being fit.
pub fn distill_policy(env: &EnvConfig, ckpt: &mut Checkpoint, cfg: &DistillConfig, seed: u64) -> Result<DistillReport> {
    let states = expert_states(env, ckpt, cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[11]));
    let mut adam = AdamState::new(
        &ckpt.model.dreamer.policy,
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    let mut order: Vec<usize> = (0..states.len()).collect();
    let per_epoch = states.len().div_ceil(cfg.minibatch_size.max(1));
    let total_steps = (per_epoch * cfg.epochs).max(1) as f64;
    let mut step = 0usize;
    for epoch in 0..=cfg.epochs {
        let targets = expert_targets(env, ckpt, &states)?;
        let mut err = 0.0;
        for (s, t) in states.iter().zip(&targets) {
            let a = ckpt.model.dreamer.act(
                &s.input[..ckpt.model.dreamer.dims.obs_dim()],
                &s.input[ckpt.model.dreamer.dims.obs_dim()..],
            )?;
            err += a.iter().zip(t).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
        }
        losses.push(err / states.len().max(1) as f64);
        if epoch == cfg.epochs {
            break;
        }
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch_size.max(1)) {
            let input = Batch::from_samples(&chunk.iter().map(|&i| states[i].input.as_slice()).collect::<Vec<_>>())?;
            let target = Batch::from_samples(&chunk.iter().map(|&i| targets[i].as_slice()).collect::<Vec<_>>())?;
            let progress = step as f64 / total_steps;
            adam.config.lr = cfg.final_learning_rate
                + 0.5 * (cfg.learning_rate - cfg.final_learning_rate) * (1.0 + (std::f64::consts::PI * progress).cos());
            fit_step(&mut ckpt.model.dreamer.policy, &mut adam, &input, &target)?;
            step += 1;
        }
    }
    Ok(DistillReport {
        states: states.len(),
        epoch_losses: losses,
    })
}

fn expert_targets(env: &EnvConfig, ckpt: &Checkpoint, states: &[State]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(states.len());
    for chunk in states.chunks(1024) {
        let hs: Vec<&ObservationHistory> = chunk.iter().map(|s| &s.history).collect();
        let xs = ckpt.model.dreamer.actor_input_batch(&hs, &ckpt.model.velocity)?;
        let mu = ckpt.experts.actor.mean.forward_batch(&Batch::from_samples(&xs)?)?;
        for j in 0..chunk.len() {
            let mut a = mu.output().sample(j);
            clamp_action(env, &mut a);
            out.push(a);
        }
    }
    Ok(out)
}

fn expert_states(env: &EnvConfig, ckpt: &Checkpoint, cfg: &DistillConfig, seed: u64) -> Result<Vec<State>> {
    let model = &ckpt.model;
    let m = model.dreamer.dims.history;
    let layout = env.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[12]));
    let mut out = Vec::with_capacity(cfg.states);
    let mut episode = 0u64;
    while out.len() < cfg.states {
        let (mut sim, obs) = Env::new(env.clone(), derive_seed(seed, &[13, episode]))?;
        episode += 1;
        let cmd = sample_command(env, &mut rng);
        let mut obs = obs.0;
        layout.set_command(&mut obs, &cmd);
        let mut history = ObservationHistory::new(m);
        history.push(obs.clone());
        for _ in 0..cfg.episode_steps {
            if out.len() >= cfg.states {
                break;
            }
            let cond = model.dreamer.condition(&model.velocity, &history.window_flat(m))?;
            let x = model.dreamer.actor_input(&history, &model.velocity)?;
            let (mut a, _, _) = ckpt.experts.actor.sample(&x, &mut rng)?;
            clamp_action(env, &mut a);
            out.push(State {
                history: history.clone(),
                input: concat(&[&obs, &cond]),
            });
            let t = sim.step(&a, &cmd)?;
            if t.done {
                break;
            }
            obs = t.observation.0;
            history.push(obs.clone());
        }
    }
    Ok(out)
}

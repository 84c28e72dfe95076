use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dynamics_target, sample_command, Checkpoint};
use crate::env::{clamp_action, Env, EnvConfig};
use crate::error::Result;
use crate::internal_model::{concat, ObservationHistory};
use crate::seed::derive_seed;
use crate::tensornet::mse;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPolicy {
    /// Expert actor mean over the dreamed actor input.
    Expert,
    /// The bundle's cloned policy.
    Cloned,
    Zero,
}

/// Undiscounted returns of `episodes` deterministic episodes of at most
/// `steps` steps. Episode `e` uses the same reset seed, noise stream and
/// command for every policy.
pub fn evaluate_returns(
    env: &EnvConfig,
    ckpt: &Checkpoint,
    policy: EvalPolicy,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let model = &ckpt.model;
    let layout = env.layout();
    let m = model.dreamer.dims.history;
    (0..episodes as u64)
        .map(|e| {
            let (mut sim, obs) = Env::new(env.clone(), derive_seed(seed, &[e, 0]))?;
            let cmd = sample_command(env, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[e, 1])));
            let mut obs = obs.0;
            layout.set_command(&mut obs, &cmd);
            let mut history = ObservationHistory::new(m);
            history.push(obs.clone());
            let mut ret = 0.0;
            for _ in 0..steps {
                let mut a = match policy {
                    EvalPolicy::Expert => {
                        let x = model.dreamer.actor_input(&history, &model.velocity)?;
                        ckpt.experts.actor.mean_action(&x)?
                    }
                    EvalPolicy::Cloned => {
                        let cond = model.dreamer.condition(&model.velocity, &history.window_flat(m))?;
                        model.dreamer.act(&obs, &cond)?
                    }
                    EvalPolicy::Zero => vec![0.0; env.joints],
                };
                clamp_action(env, &mut a);
                let t = sim.step(&a, &cmd)?;
                ret += t.reward;
                if t.done {
                    break;
                }
                obs = t.observation.0;
                history.push(obs.clone());
            }
            Ok(ret)
        })
        .collect()
}

/// Held-out quality of the learned components on transitions generated by
/// the stochastic expert.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    pub samples: usize,
    pub dynamics_mse: f64,
    pub no_change_mse: f64,
    pub reward_mse: f64,
    pub bc_mse: f64,
    pub velocity_mse: f64,
    pub zero_velocity_mse: f64,
}

pub fn model_diagnostics(
    env: &EnvConfig,
    ckpt: &Checkpoint,
    samples: usize,
    steps: usize,
    seed: u64,
) -> Result<ModelDiagnostics> {
    let model = &ckpt.model;
    let b = &model.dreamer;
    let layout = env.layout();
    let m = b.dims.history;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[7]));
    let mut d = ModelDiagnostics {
        samples: 0,
        dynamics_mse: 0.0,
        no_change_mse: 0.0,
        reward_mse: 0.0,
        bc_mse: 0.0,
        velocity_mse: 0.0,
        zero_velocity_mse: 0.0,
    };
    let mut episode = 0u64;
    while d.samples < samples {
        let (mut sim, obs) = Env::new(env.clone(), derive_seed(seed, &[episode, 2]))?;
        let cmd = sample_command(env, &mut rng);
        episode += 1;
        let mut obs = obs.0;
        layout.set_command(&mut obs, &cmd);
        let mut history = ObservationHistory::new(m);
        history.push(obs.clone());
        for _ in 0..steps {
            if d.samples >= samples {
                break;
            }
            let window = history.window_flat(m);
            let x = b.actor_input(&history, &model.velocity)?;
            let (mut a, _, expert_mean) = ckpt.experts.actor.sample(&x, &mut rng)?;
            clamp_action(env, &mut a);
            let twist = sim.state().twist;
            let t = sim.step(&a, &cmd)?;

            let cond = b.condition(&model.velocity, &window)?;
            let target = dynamics_target(model, &obs, &t.observation);
            let pred = b.dynamics.forward(&concat(&[&obs, &cond, &a]))?;
            d.dynamics_mse += mse(&pred, &target)?;
            d.no_change_mse += mse(&vec![0.0; target.len()], &target)?;
            let r = b.predict_reward(&obs, &cond, &a)?;
            d.reward_mse += (r - t.reward).powi(2);
            let cloned = b.act(&obs, &cond)?;
            let mut executed = expert_mean;
            clamp_action(env, &mut executed);
            d.bc_mse += mse(&cloned, &executed)?;
            let v = model.velocity.estimate_window(&window)?;
            d.velocity_mse += mse(&v, &twist)?;
            d.zero_velocity_mse += mse(&[0.0; 3], &twist)?;
            d.samples += 1;

            if t.done {
                break;
            }
            obs = t.observation.0;
            history.push(obs.clone());
        }
    }
    let n = d.samples.max(1) as f64;
    d.dynamics_mse /= n;
    d.no_change_mse /= n;
    d.reward_mse /= n;
    d.bc_mse /= n;
    d.velocity_mse /= n;
    d.zero_velocity_mse /= n;
    Ok(d)
}

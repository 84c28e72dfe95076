use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensornet::{layer_sizes, Activation, AdamConfig, AdamState, Batch, Gradients, Mlp, VecAdam};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub value_clip: f64,
    pub rollout_length: usize,
    pub num_envs: usize,
    pub max_grad_norm: f64,
    pub init_log_std: f64,
    /// The critic is trained on returns multiplied by this factor.
    pub value_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gae_lambda: 0.95,
            gamma: 0.99,
            learning_rate: 1e-3,
            epochs: 5,
            minibatch_size: 256,
            entropy_coef: 0.001,
            value_coef: 1.0,
            value_clip: 0.2,
            rollout_length: 64,
            num_envs: 16,
            max_grad_norm: 1.0,
            init_log_std: -0.7,
            value_scale: 0.01,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("ppo clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.rollout_length == 0 || self.num_envs == 0 {
            return bad("epochs, minibatch size, rollout length and env count must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.value_scale > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("learning rate, value scale and grad norm must be positive");
        }
        Ok(())
    }
}

/// Gaussian policy: MLP mean plus a state-independent log standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianActor {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianActor {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        actions: usize,
        act: Activation,
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            mean: Mlp::new(&layer_sizes(input, hidden, actions), act, rng),
            log_std: vec![init_log_std; actions],
        }
    }

    pub fn mean_action(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.mean.forward(input)
    }

    pub fn sample<R: Rng + ?Sized>(&self, input: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64, Vec<f64>)> {
        let mu = self.mean.forward(input)?;
        let a: Vec<f64> = mu
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s.exp() * z
            })
            .collect();
        let lp = log_prob(&mu, &self.log_std, &a);
        Ok((a, lp, mu))
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|s| s + 0.5 * (LN_2PI + 1.0)).sum()
    }
}

pub fn log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, s), a)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - 0.5 * LN_2PI
        })
        .sum()
}

/// Expert actor over the actor input and privileged critic over
/// `observation ⊕ privileged`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertPair {
    pub actor: GaussianActor,
    pub critic: Mlp,
}

/// Generalized advantage estimation over one lane. `values` carries the
/// bootstrap value as its last entry; `dones[t]` cuts the recursion after `t`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 {
        return Err(Error::shape("gae values", n + 1, values.len()));
    }
    if dones.len() != n {
        return Err(Error::shape("gae dones", n, dones.len()));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Clipped surrogate `-min(ρA, clip(ρ, 1±ε)A)` and its derivative in `ρ`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        (-unclipped, -advantage)
    } else {
        (-clipped, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoSample {
    pub actor_input: Vec<f64>,
    pub critic_input: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct PpoGradients {
    pub actor: Gradients,
    pub log_std: Vec<f64>,
    pub critic: Gradients,
    pub stats: PpoStats,
}

/// Loss statistics and gradients of
/// `mean(surrogate) + c_v·mean(value loss) − c_e·entropy` over `samples`.
pub fn ppo_gradients(pair: &ExpertPair, samples: &[&PpoSample], cfg: &PpoConfig) -> Result<PpoGradients> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidConfig("empty ppo minibatch".into()));
    }
    let k = pair.actor.log_std.len();
    let inv_n = 1.0 / n as f64;
    let actor_in = Batch::from_samples(&samples.iter().map(|s| s.actor_input.as_slice()).collect::<Vec<_>>())?;
    let critic_in = Batch::from_samples(&samples.iter().map(|s| s.critic_input.as_slice()).collect::<Vec<_>>())?;
    let a_trace = pair.actor.mean.forward_batch(&actor_in)?;
    let c_trace = pair.critic.forward_batch(&critic_in)?;
    let mu = a_trace.output();
    let v = c_trace.output();
    let std: Vec<f64> = pair.actor.log_std.iter().map(|s| s.exp()).collect();

    let mut up_mu = Batch::zeros(k, n);
    let mut up_v = Batch::zeros(1, n);
    let mut g_log_std = vec![-cfg.entropy_coef; k];
    let mut stats = PpoStats::default();
    let mut clipped = 0usize;
    for (j, s) in samples.iter().enumerate() {
        let mut lp = 0.0;
        for i in 0..k {
            let z = (s.action[i] - mu.get(i, j)) / std[i];
            lp += -0.5 * z * z - pair.actor.log_std[i] - 0.5 * LN_2PI;
        }
        let log_ratio = lp - s.log_prob;
        let ratio = log_ratio.exp();
        let (loss, d_ratio) = clipped_surrogate(ratio, s.advantage, cfg.clip);
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1;
        }
        stats.policy_loss += loss * inv_n;
        stats.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;
        let d_lp = d_ratio * ratio * inv_n;
        for i in 0..k {
            let diff = s.action[i] - mu.get(i, j);
            let var = std[i] * std[i];
            up_mu.set(i, j, d_lp * diff / var);
            g_log_std[i] += d_lp * (diff * diff / var - 1.0);
        }

        let vj = v.get(0, j);
        let v_clip = s.value + (vj - s.value).clamp(-cfg.value_clip, cfg.value_clip);
        let e1 = vj - s.ret;
        let e2 = v_clip - s.ret;
        let grad = if e1 * e1 >= e2 * e2 {
            stats.value_loss += 0.5 * e1 * e1 * inv_n;
            e1
        } else {
            stats.value_loss += 0.5 * e2 * e2 * inv_n;
            if (vj - s.value).abs() < cfg.value_clip {
                e2
            } else {
                0.0
            }
        };
        up_v.set(0, j, cfg.value_coef * grad * inv_n);
    }
    stats.entropy = pair.actor.entropy();
    stats.clip_fraction = clipped as f64 * inv_n;
    if !stats.policy_loss.is_finite() || !stats.value_loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "ppo loss (policy {}, value {}, kl {})",
            stats.policy_loss, stats.value_loss, stats.approx_kl
        )));
    }
    let (actor, _) = pair.actor.mean.backward_batch(&a_trace, &up_mu)?;
    let (critic, _) = pair.critic.backward_batch(&c_trace, &up_v)?;
    Ok(PpoGradients {
        actor,
        log_std: g_log_std,
        critic,
        stats,
    })
}

/// Adam states for the expert pair.
#[derive(Clone, Debug)]
pub struct PpoOptim {
    pub actor: AdamState,
    pub log_std: VecAdam,
    pub critic: AdamState,
}

impl PpoOptim {
    pub fn new(pair: &ExpertPair, lr: f64) -> Self {
        let cfg = AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        Self {
            actor: AdamState::new(&pair.actor.mean, cfg),
            log_std: VecAdam::new(pair.actor.log_std.len(), cfg),
            critic: AdamState::new(&pair.critic, cfg),
        }
    }
}

pub(crate) fn clip_norm(grads: &mut Gradients, extra: &mut [f64], max_norm: f64) {
    let norm = (grads.squared_norm() + extra.iter().map(|x| x * x).sum::<f64>()).sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.scale(s);
        extra.iter_mut().for_each(|x| *x *= s);
    }
}

/// Normalizes advantages over the whole batch, then runs `epochs` passes of
/// shuffled minibatch Adam steps. Returns statistics averaged over minibatches.
pub fn ppo_update<R: Rng + ?Sized>(
    pair: &mut ExpertPair,
    opt: &mut PpoOptim,
    samples: &mut [PpoSample],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empty ppo buffer".into()));
    }
    normalize_advantages(samples);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut total = PpoStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let mb: Vec<&PpoSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let mut g = ppo_gradients(pair, &mb, cfg)?;
            clip_norm(&mut g.actor, &mut g.log_std, cfg.max_grad_norm);
            clip_norm(&mut g.critic, &mut [], cfg.max_grad_norm);
            opt.actor.step(&mut pair.actor.mean, &g.actor)?;
            opt.log_std.step(&mut pair.actor.log_std, &g.log_std)?;
            opt.critic.step(&mut pair.critic, &g.critic)?;
            total.policy_loss += g.stats.policy_loss;
            total.value_loss += g.stats.value_loss;
            total.approx_kl += g.stats.approx_kl;
            total.clip_fraction += g.stats.clip_fraction;
            count += 1.0;
        }
    }
    total.policy_loss /= count;
    total.value_loss /= count;
    total.approx_kl /= count;
    total.clip_fraction /= count;
    total.entropy = pair.actor.entropy();
    Ok(total)
}

pub fn normalize_advantages(samples: &mut [PpoSample]) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for s in samples {
        s.advantage = (s.advantage - mean) / std;
    }
}

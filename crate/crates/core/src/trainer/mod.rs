//! Single-phase co-training: PPO on the expert pair interleaved 1:1 with
//! supervised updates of the internal model.
//!
//! Iteration `i` collects with actor inputs dreamed by the bundle produced
//! by iteration `i − 1`, then runs the PPO update, then the supervised
//! update (whose targets come from the freshly updated experts).

mod distill;
mod eval;
mod ppo;
mod supervised;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, Twist};
use crate::error::{Error, Result};
use crate::internal_model::{concat, ActorInputs, DreamerDims, InternalModel, ObservationHistory, Variant};
use crate::seed::derive_seed;
use crate::tensornet::checkpoint::{encode_mlp, sidecar_path, Reader};
use crate::tensornet::{layer_sizes, Activation, Mlp, DEFAULT_HIDDEN};

pub use distill::{distill_policy, DistillConfig, DistillReport};
pub use eval::{evaluate_returns, model_diagnostics, EvalPolicy, ModelDiagnostics};
pub use ppo::{
    clipped_surrogate, gae, log_prob, normalize_advantages, ppo_gradients, ppo_update, ExpertPair, GaussianActor,
    PpoConfig, PpoGradients, PpoOptim, PpoSample, PpoStats,
};
pub use supervised::{
    dynamics_target, supervised_update, SupervisedConfig, SupervisedLosses, SupervisedOptim, SupervisedSample,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub horizon: usize,
    /// Defaults to the variant's history length.
    pub history: Option<usize>,
    pub latent: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub actor_inputs: ActorInputs,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Nlm,
            horizon: 5,
            history: None,
            latent: 16,
            hidden: DEFAULT_HIDDEN.to_vec(),
            activation: Activation::Tanh,
            actor_inputs: ActorInputs::InternalModel,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, joints: usize, action_bound: f64) -> DreamerDims {
        let mut d = DreamerDims::new(self.variant, joints, self.horizon, action_bound);
        if let Some(m) = self.history {
            d.history = m;
        }
        d.latent = self.latent;
        d.hidden = self.hidden.clone();
        d.activation = self.activation;
        d.actor_inputs = self.actor_inputs;
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub supervised: SupervisedConfig,
    pub model: ModelConfig,
    pub iterations: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    pub command_resample_steps: usize,
    pub push_probability: f64,
    pub push_scale: [f64; 3],
    /// Policy cloning against the frozen final expert, run after the last
    /// iteration.
    pub distill: DistillConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::new(4, 0),
            ppo: PpoConfig::default(),
            supervised: SupervisedConfig::default(),
            model: ModelConfig::default(),
            iterations: 300,
            seed: 0,
            checkpoint_every: 100,
            command_resample_steps: 200,
            push_probability: 0.004,
            push_scale: [0.5, 0.5, 0.5],
            distill: DistillConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        if self.model.horizon == 0 {
            return Err(Error::InvalidConfig("dream horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.push_probability) {
            return Err(Error::InvalidConfig("push probability must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// The value head is trained in the critic's units and rescaled to
    /// returns on output.
    pub fn dims(&self) -> DreamerDims {
        let mut d = self.model.dims(self.env.joints, self.env.action_bound);
        d.value_scale = 1.0 / self.ppo.value_scale;
        d
    }
}

pub fn sample_command<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Twist {
    let c: [f64; 3] = std::array::from_fn(|i| rng.gen_range(cfg.command_low[i]..=cfg.command_high[i]));
    Twist::from_array(c)
}

/// Internal model plus expert pair at some iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub model: InternalModel,
    pub experts: ExpertPair,
}

const CKPT_MAGIC: &[u8; 8] = b"DRMPCKPT";
const CKPT_VERSION: u32 = 1;

impl Checkpoint {
    /// Networks initialized from `cfg.seed`, before any update.
    pub fn initial(cfg: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
        let dims = cfg.dims();
        let model = InternalModel::new(cfg.model.variant, dims.clone(), &mut rng)?;
        let actor_dim = model.dreamer.actor_layout().dim();
        let actor = GaussianActor::new(
            actor_dim,
            &dims.hidden,
            dims.joints,
            dims.activation,
            cfg.ppo.init_log_std,
            &mut rng,
        );
        let critic = Mlp::new(
            &layer_sizes(dims.obs_dim() + crate::env::PrivilegedObservation::DIM, &dims.hidden, 1),
            dims.activation,
            &mut rng,
        );
        Ok(Self {
            iteration: 0,
            model,
            experts: ExpertPair { actor, critic },
        })
    }

    /// Binary layout: magic `DRMPCKPT`, `u32` version, `u64` iteration,
    /// `u64` bundle length and bundle bytes, actor mean network, `u32`
    /// action count and log-std entries, critic network.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.iteration as u64).to_le_bytes());
        let bundle = self.model.encode();
        out.extend_from_slice(&(bundle.len() as u64).to_le_bytes());
        out.extend_from_slice(&bundle);
        encode_mlp(&self.experts.actor.mean, &mut out);
        out.extend_from_slice(&(self.experts.actor.log_std.len() as u32).to_le_bytes());
        for s in &self.experts.actor.log_std {
            out.extend_from_slice(&s.to_le_bytes());
        }
        encode_mlp(&self.experts.critic, &mut out);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.bytes(8)? != CKPT_MAGIC {
            return Err(Error::Checkpoint("bad checkpoint magic".into()));
        }
        let v = r.u32()?;
        if v != CKPT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {v}")));
        }
        let iteration = u64::from_le_bytes(r.bytes(8)?.try_into().unwrap()) as usize;
        let len = u64::from_le_bytes(r.bytes(8)?.try_into().unwrap()) as usize;
        let model = InternalModel::decode(r.bytes(len)?)?;
        let mean = r.mlp()?;
        let k = r.u32()? as usize;
        let log_std = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let critic = r.mlp()?;
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        if mean.input_dim() != model.dreamer.actor_layout().dim() || mean.output_dim() != k {
            return Err(Error::Checkpoint(
                "actor does not match the bundle's actor layout".into(),
            ));
        }
        Ok(Self {
            iteration,
            model,
            experts: ExpertPair {
                actor: GaussianActor { mean, log_std },
                critic,
            },
        })
    }

    /// Writes the checkpoint and a JSON sidecar with `config`.
    pub fn save(&self, path: &Path, config: &TrainConfig) -> Result<()> {
        fs::write(path, self.encode())?;
        let sidecar = serde_json::json!({
            "schema": "dreamplan.checkpoint",
            "schema_version": SCHEMA_VERSION,
            "iteration": self.iteration,
            "variant": self.model.dreamer.variant,
            "config": config,
        });
        fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// Reads the training config stored next to a checkpoint.
    pub fn load_config(path: &Path) -> Result<TrainConfig> {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
        let cfg = v
            .get("config")
            .ok_or_else(|| Error::Checkpoint("sidecar without config".into()))?;
        Ok(serde_json::from_value(cfg.clone())?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub schema: String,
    pub schema_version: u32,
    pub iteration: usize,
    /// Supervised updates applied to the bundle that dreamed this
    /// iteration's actor inputs.
    pub bundle_version: usize,
    pub env_steps: usize,
    pub mean_step_reward: f64,
    pub episodes: usize,
    pub falls: usize,
    pub mean_episode_return: Option<f64>,
    pub mean_episode_length: Option<f64>,
    pub action_std: f64,
    pub ppo: PpoStats,
    pub supervised: SupervisedLosses,
}

struct Lane {
    env: Env,
    history: ObservationHistory,
    obs: Vec<f64>,
    privileged: Vec<f64>,
    cmd: Twist,
    since_command: usize,
    episode: u64,
    ep_return: f64,
    ep_len: usize,
}

struct Record {
    window: Vec<f64>,
    observation: Vec<f64>,
    actor_input: Vec<f64>,
    critic_input: Vec<f64>,
    action: Vec<f64>,
    env_action: Vec<f64>,
    log_prob: f64,
    reward: f64,
    value: f64,
    bootstrap: f64,
    done: bool,
    twist: [f64; 3],
    next_observation: Vec<f64>,
}

pub struct Trainer {
    cfg: TrainConfig,
    ckpt: Checkpoint,
    ppo_opt: PpoOptim,
    sup_opt: SupervisedOptim,
    rng: ChaCha8Rng,
    lanes: Vec<Lane>,
    env_steps: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let ckpt = Checkpoint::initial(&cfg)?;
        let ppo_opt = PpoOptim::new(&ckpt.experts, cfg.ppo.learning_rate);
        let sup_opt = SupervisedOptim::new(&ckpt.model, cfg.supervised.learning_rate);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));
        let m = ckpt.model.dreamer.dims.history;
        let mut lanes = Vec::with_capacity(cfg.ppo.num_envs);
        for lane in 0..cfg.ppo.num_envs {
            let (env, obs) = Env::new(cfg.env.clone(), derive_seed(cfg.seed, &[3, lane as u64, 0]))?;
            let mut l = Lane {
                privileged: env.privileged().0,
                env,
                history: ObservationHistory::new(m),
                obs: obs.0,
                cmd: Twist::ZERO,
                since_command: 0,
                episode: 0,
                ep_return: 0.0,
                ep_len: 0,
            };
            l.cmd = sample_command(&cfg.env, &mut rng);
            cfg.env.layout().set_command(&mut l.obs, &l.cmd);
            l.history.push(l.obs.clone());
            lanes.push(l);
        }
        Ok(Self {
            cfg,
            ckpt,
            ppo_opt,
            sup_opt,
            rng,
            lanes,
            env_steps: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.ckpt
    }

    /// Collect, PPO update, supervised update.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let bundle_version = self.ckpt.iteration;
        let (records, bootstrap, stats) = self.collect()?;
        let ppo_cfg = self.cfg.ppo.clone();

        let mut samples = Vec::with_capacity(records.len() * ppo_cfg.rollout_length);
        for (lane, recs) in records.iter().enumerate() {
            let rewards: Vec<f64> = recs
                .iter()
                .map(|r| r.reward * ppo_cfg.value_scale + r.bootstrap)
                .collect();
            let mut values: Vec<f64> = recs.iter().map(|r| r.value).collect();
            values.push(bootstrap[lane]);
            let dones: Vec<bool> = recs.iter().map(|r| r.done).collect();
            let (adv, ret) = gae(&rewards, &values, &dones, ppo_cfg.gamma, ppo_cfg.gae_lambda)?;
            for (t, r) in recs.iter().enumerate() {
                samples.push(PpoSample {
                    actor_input: r.actor_input.clone(),
                    critic_input: r.critic_input.clone(),
                    action: r.action.clone(),
                    log_prob: r.log_prob,
                    advantage: adv[t],
                    ret: ret[t],
                    value: r.value,
                });
            }
        }
        let ppo_stats = ppo_update(
            &mut self.ckpt.experts,
            &mut self.ppo_opt,
            &mut samples,
            &ppo_cfg,
            &mut self.rng,
        )?;

        let experts = &self.ckpt.experts;
        let mut sup = Vec::with_capacity(samples.len());
        for r in records.into_iter().flatten() {
            let mut expert_action = experts.actor.mean_action(&r.actor_input)?;
            crate::env::clamp_action(&self.cfg.env, &mut expert_action);
            let expert_value = experts.critic.forward(&r.critic_input)?[0];
            sup.push(SupervisedSample {
                window: r.window,
                observation: r.observation,
                action: r.env_action,
                next_observation: r.next_observation,
                reward: r.reward,
                twist: r.twist,
                expert_action,
                expert_value,
            });
        }
        let sup_losses = supervised_update(
            &mut self.ckpt.model,
            &mut self.sup_opt,
            &sup,
            &self.cfg.supervised,
            &mut self.rng,
        )?;
        self.ckpt.iteration += 1;

        let action_std = self.ckpt.experts.actor.log_std.iter().map(|s| s.exp()).sum::<f64>()
            / self.ckpt.experts.actor.log_std.len() as f64;
        Ok(IterationMetrics {
            schema: "dreamplan.metrics".into(),
            schema_version: SCHEMA_VERSION,
            iteration: self.ckpt.iteration,
            bundle_version,
            env_steps: self.env_steps,
            mean_step_reward: stats.reward_sum / stats.steps as f64,
            episodes: stats.returns.len(),
            falls: stats.falls,
            mean_episode_return: mean(&stats.returns),
            mean_episode_length: mean(&stats.lengths),
            action_std,
            ppo: ppo_stats,
            supervised: sup_losses,
        })
    }

    #[allow(clippy::type_complexity)]
    fn collect(&mut self) -> Result<(Vec<Vec<Record>>, Vec<f64>, CollectStats)> {
        let cfg = &self.cfg;
        let model = &self.ckpt.model;
        let experts = &self.ckpt.experts;
        let layout = cfg.env.layout();
        let m = model.dreamer.dims.history;
        let t_len = cfg.ppo.rollout_length;
        let mut stats = CollectStats::default();
        let mut records: Vec<Vec<Record>> = (0..self.lanes.len()).map(|_| Vec::with_capacity(t_len)).collect();
        for _ in 0..t_len {
            let histories: Vec<&ObservationHistory> = self.lanes.iter().map(|l| &l.history).collect();
            let inputs = model.dreamer.actor_input_batch(&histories, &model.velocity)?;
            for ((li, lane), actor_input) in self.lanes.iter_mut().enumerate().zip(inputs) {
                let (action, log_prob, _) = experts.actor.sample(&actor_input, &mut self.rng)?;
                let mut env_action = action.clone();
                crate::env::clamp_action(&cfg.env, &mut env_action);
                let critic_input = concat(&[&lane.obs, &lane.privileged]);
                let value = experts.critic.forward(&critic_input)?[0];
                let twist = lane.env.state().twist;
                let window = lane.history.window_flat(m);

                if self.rng.gen::<f64>() < cfg.push_probability {
                    let impulse: [f64; 3] = std::array::from_fn(|i| {
                        let z: f64 = StandardNormal.sample(&mut self.rng);
                        cfg.push_scale[i] * z
                    });
                    lane.env.apply_disturbance(impulse);
                }
                let tr = lane.env.step(&env_action, &lane.cmd)?;
                self.env_steps += 1;
                stats.steps += 1;
                stats.reward_sum += tr.reward;
                lane.ep_return += tr.reward;
                lane.ep_len += 1;

                let mut bootstrap = 0.0;
                if tr.timeout {
                    let next_in = concat(&[&tr.observation, &tr.privileged]);
                    bootstrap = cfg.ppo.gamma * experts.critic.forward(&next_in)?[0];
                }
                let next_observation = tr.observation.0.clone();
                records[li].push(Record {
                    window,
                    observation: std::mem::take(&mut lane.obs),
                    actor_input,
                    critic_input,
                    action,
                    env_action,
                    log_prob,
                    reward: tr.reward,
                    value,
                    bootstrap,
                    done: tr.done,
                    twist,
                    next_observation,
                });

                if tr.done {
                    stats.returns.push(lane.ep_return);
                    stats.lengths.push(lane.ep_len as f64);
                    if !tr.timeout {
                        stats.falls += 1;
                    }
                    lane.episode += 1;
                    lane.ep_return = 0.0;
                    lane.ep_len = 0;
                    let obs = lane.env.reset(derive_seed(cfg.seed, &[3, li as u64, lane.episode]));
                    lane.obs = obs.0;
                    lane.privileged = lane.env.privileged().0;
                    lane.cmd = sample_command(&cfg.env, &mut self.rng);
                    lane.since_command = 0;
                    lane.history.clear();
                } else {
                    lane.obs = tr.observation.0;
                    lane.privileged = tr.privileged.0;
                    lane.since_command += 1;
                    if cfg.command_resample_steps > 0 && lane.since_command >= cfg.command_resample_steps {
                        lane.cmd = sample_command(&cfg.env, &mut self.rng);
                        lane.since_command = 0;
                    }
                }
                layout.set_command(&mut lane.obs, &lane.cmd);
                lane.history.push(lane.obs.clone());
            }
        }
        let bootstrap = self
            .lanes
            .iter()
            .map(|l| Ok(experts.critic.forward(&concat(&[&l.obs, &l.privileged]))?[0]))
            .collect::<Result<Vec<_>>>()?;
        Ok((records, bootstrap, stats))
    }
}

#[derive(Default)]
struct CollectStats {
    steps: usize,
    reward_sum: f64,
    returns: Vec<f64>,
    lengths: Vec<f64>,
    falls: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<IterationMetrics>,
    pub distill: Option<DistillReport>,
}

/// Paths of the files `train` writes under its output directory.
pub struct TrainPaths {
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub checkpoints: PathBuf,
    pub final_checkpoint: PathBuf,
    pub distill: PathBuf,
}

impl TrainPaths {
    pub fn new(out: &Path) -> Self {
        Self {
            config: out.join("config.json"),
            metrics: out.join("metrics.jsonl"),
            checkpoints: out.join("checkpoints"),
            final_checkpoint: out.join("final.ckpt"),
            distill: out.join("distill.json"),
        }
    }
}

/// Runs `cfg.iterations` iterations followed by the distillation phase
/// (skipped when no iteration ran). With `out`, writes the resolved config,
/// one metrics line per iteration, periodic checkpoints, the distillation
/// report and `final.ckpt`.
pub fn train(cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut log = match out {
        Some(dir) => {
            let p = TrainPaths::new(dir);
            fs::create_dir_all(&p.checkpoints)?;
            let resolved = serde_json::json!({
                "schema": "dreamplan.train_config",
                "schema_version": SCHEMA_VERSION,
                "config": cfg,
            });
            fs::write(&p.config, serde_json::to_vec_pretty(&resolved)?)?;
            Some((p, fs::File::create(TrainPaths::new(dir).metrics)?))
        }
        None => None,
    };
    let mut metrics = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let m = trainer.step()?;
        if let Some((p, f)) = log.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&m)?)?;
            if cfg.checkpoint_every > 0 && m.iteration % cfg.checkpoint_every == 0 {
                let path = p.checkpoints.join(format!("iter_{:05}.ckpt", m.iteration));
                trainer.checkpoint().save(&path, cfg)?;
            }
        }
        metrics.push(m);
    }
    let mut checkpoint = trainer.into_checkpoint();
    let distill = if cfg.iterations > 0 && cfg.distill.states > 0 && cfg.distill.epochs > 0 {
        Some(distill_policy(
            &cfg.env,
            &mut checkpoint,
            &cfg.distill,
            derive_seed(cfg.seed, &[4]),
        )?)
    } else {
        None
    };
    if let Some((p, mut f)) = log {
        f.flush()?;
        if let Some(d) = &distill {
            let doc = serde_json::json!({
                "schema": "dreamplan.distill",
                "schema_version": SCHEMA_VERSION,
                "report": d,
            });
            fs::write(&p.distill, serde_json::to_vec_pretty(&doc)?)?;
        }
        checkpoint.save(&p.final_checkpoint, cfg)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        metrics,
        distill,
    })
}

use dreamplan_core::env::{clamp_action, Env, EnvConfig, PrivilegedObservation};
use dreamplan_core::internal_model::{ActorInputs, DreamerDims, InternalModel, ObservationHistory, Variant};
use dreamplan_core::tensornet::{mse, Activation, Layer, Matrix, Mlp};
use dreamplan_core::trainer::{
    clipped_surrogate, gae, log_prob, ppo_gradients, sample_command, supervised_update, train, Checkpoint, ExpertPair,
    GaussianActor, PpoConfig, PpoSample, SupervisedConfig, SupervisedOptim, SupervisedSample, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: usize = 4;
const P: usize = 3 * K + 6;

/// Direct-sum advantage: Σ_l (γλ)^l δ_{t+l}, stopping after a terminal step.
fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| r[t] + if d[t] { 0.0 } else { gamma * v[t + 1] } - v[t])
        .collect();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut w = 1.0;
            for i in t..n {
                acc += w * delta[i];
                if d[i] {
                    break;
                }
                w *= gamma * lambda;
            }
            acc
        })
        .collect()
}

fn episode(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    (
        prop::collection::vec(-2.0..2.0f64, len),
        prop::collection::vec(-5.0..5.0f64, len + 1),
        prop::collection::vec(prop::bool::weighted(0.15), len),
    )
}

#[test]
fn gae_one_step() {
    let (a, ret) = gae(&[1.0], &[1.0, 2.0], &[false], 0.99, 0.95).unwrap();
    assert!((a[0] - 1.98).abs() < 1e-12);
    assert!((ret[0] - 2.98).abs() < 1e-12);
}

#[test]
fn gae_rejects_misaligned() {
    assert!(gae(&[1.0, 2.0], &[0.0, 0.0], &[false, false], 0.99, 0.95).is_err());
    assert!(gae(&[1.0], &[0.0, 0.0], &[], 0.99, 0.95).is_err());
}

proptest! {
    #[test]
    fn gae_matches_direct_sum((r, v, d) in episode(20), gamma in 0.5..1.0f64, lambda in 0.0..=1.0f64) {
        let (a, ret) = gae(&r, &v, &d, gamma, lambda).unwrap();
        let oracle = gae_oracle(&r, &v, &d, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((a[t] - oracle[t]).abs() < 1e-12, "t={} {} vs {}", t, a[t], oracle[t]);
            prop_assert!((ret[t] - (a[t] + v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_lambda_zero_is_td((r, v, d) in episode(20), gamma in 0.5..1.0f64) {
        let (a, _) = gae(&r, &v, &d, gamma, 0.0).unwrap();
        for t in 0..r.len() {
            let td = r[t] + if d[t] { 0.0 } else { gamma * v[t + 1] } - v[t];
            prop_assert!((a[t] - td).abs() < 1e-12);
        }
    }
}

fn pair(input: usize, rng: &mut ChaCha8Rng) -> ExpertPair {
    ExpertPair {
        actor: GaussianActor::new(input, &[8, 8], K, Activation::Tanh, -0.5, rng),
        critic: Mlp::new(&[P + PrivilegedObservation::DIM, 8, 1], Activation::Tanh, rng),
    }
}

/// Samples whose stored log-probabilities come from the current policy.
fn fresh_samples(pair: &ExpertPair, n: usize, rng: &mut ChaCha8Rng) -> Vec<PpoSample> {
    let input = pair.actor.mean.input_dim();
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (action, lp, _) = pair.actor.sample(&x, rng).unwrap();
            PpoSample {
                actor_input: x,
                critic_input: (0..P + PrivilegedObservation::DIM)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
                action,
                log_prob: lp,
                advantage: rng.gen_range(-2.0..2.0),
                ret: rng.gen_range(-1.0..1.0),
                value: rng.gen_range(-1.0..1.0),
            }
        })
        .collect()
}

#[test]
fn ratio_one_surrogate_is_negative_mean_advantage() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = pair(10, &mut rng);
    let samples = fresh_samples(&p, 32, &mut rng);
    let refs: Vec<&PpoSample> = samples.iter().collect();
    let g = ppo_gradients(&p, &refs, &PpoConfig::default()).unwrap();
    let mean_adv = samples.iter().map(|s| s.advantage).sum::<f64>() / samples.len() as f64;
    assert!((g.stats.policy_loss + mean_adv).abs() < 1e-12);
    assert_eq!(g.stats.clip_fraction, 0.0);
    assert!(g.stats.approx_kl.abs() < 1e-12);
}

#[test]
fn zero_advantage_gives_zero_policy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = pair(10, &mut rng);
    let mut samples = fresh_samples(&p, 16, &mut rng);
    samples.iter_mut().for_each(|s| s.advantage = 0.0);
    let refs: Vec<&PpoSample> = samples.iter().collect();
    let cfg = PpoConfig {
        entropy_coef: 0.0,
        ..PpoConfig::default()
    };
    let g = ppo_gradients(&p, &refs, &cfg).unwrap();
    assert_eq!(g.actor.squared_norm(), 0.0);
    assert!(g.log_std.iter().all(|&x| x == 0.0));
}

#[test]
fn surrogate_branches() {
    assert_eq!(clipped_surrogate(1.5, 1.0, 0.2), (-1.2, 0.0));
    assert_eq!(clipped_surrogate(1.1, 1.0, 0.2), (-1.1, -1.0));
    assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), (0.8, 0.0));
    assert_eq!(clipped_surrogate(0.5, 1.0, 0.2), (-0.5, -1.0));
}

/// Mean `w·x` on one action, fixed σ: the clipped-surrogate gradient in `w`
/// is `-A·ρ·(a − w x)·x/σ²` on the unclipped branch and zero otherwise.
#[test]
fn single_parameter_surrogate_gradient() {
    let sigma: f64 = 0.4;
    let (x, a, a_old_mean, adv) = (0.7, 0.3, 0.1, 1.3);
    let lp_old = log_prob(&[a_old_mean], &[sigma.ln()], &[a]);
    let cfg = PpoConfig {
        entropy_coef: 0.0,
        ..PpoConfig::default()
    };
    for &w in &[-0.5, 0.0, 0.1, 0.15, 0.3, 0.6, 1.2] {
        for &adv in &[adv, -adv] {
            let layer = Layer {
                weights: Matrix::from_vec(1, 1, vec![w]).unwrap(),
                biases: vec![0.0],
            };
            let p = ExpertPair {
                actor: GaussianActor {
                    mean: Mlp::from_layers(vec![layer], vec![]).unwrap(),
                    log_std: vec![sigma.ln()],
                },
                critic: Mlp::zeros(&[1, 1], Activation::Tanh),
            };
            let s = PpoSample {
                actor_input: vec![x],
                critic_input: vec![0.0],
                action: vec![a],
                log_prob: lp_old,
                advantage: adv,
                ret: 0.0,
                value: 0.0,
            };
            let g = ppo_gradients(&p, &[&s], &cfg).unwrap();

            let mu = w * x;
            let ratio =
                (-(a - mu).powi(2) / (2.0 * sigma * sigma) + (a - a_old_mean).powi(2) / (2.0 * sigma * sigma)).exp();
            let active = if adv >= 0.0 { ratio <= 1.2 } else { ratio >= 0.8 };
            let expected = if active {
                -adv * ratio * (a - mu) * x / (sigma * sigma)
            } else {
                0.0
            };
            let got = g.actor.layers[0].weights.get(0, 0);
            assert!((got - expected).abs() < 1e-8, "w={w} A={adv}: {got} vs {expected}");
            let loss = -(ratio * adv).min(ratio.clamp(0.8, 1.2) * adv);
            assert!((g.stats.policy_loss - loss).abs() < 1e-12);
        }
    }
}

fn model(variant: Variant, seed: u64) -> InternalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = DreamerDims::new(variant, K, 2, 1.0);
    dims.hidden = vec![16, 16];
    dims.latent = 4;
    InternalModel::new(variant, dims, &mut rng).unwrap()
}

/// Expert-free transitions from the plant under random actions.
fn transitions(m: &InternalModel, n: usize, seed: u64) -> Vec<SupervisedSample> {
    let cfg = EnvConfig::new(K, 0);
    let layout = cfg.layout();
    let hist = m.dreamer.dims.history;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut episode = 0;
    while out.len() < n {
        let (mut env, obs) = Env::new(cfg.clone(), seed * 1000 + episode).unwrap();
        episode += 1;
        let cmd = sample_command(&cfg, &mut rng);
        let mut obs = obs.0;
        layout.set_command(&mut obs, &cmd);
        let mut history = ObservationHistory::new(hist);
        history.push(obs.clone());
        for _ in 0..100 {
            let mut a: Vec<f64> = (0..K).map(|_| rng.gen_range(-0.6..0.6)).collect();
            clamp_action(&cfg, &mut a);
            let twist = env.state().twist;
            let window = history.window_flat(hist);
            let t = env.step(&a, &cmd).unwrap();
            let mut next = t.observation.0.clone();
            layout.set_command(&mut next, &cmd);
            out.push(SupervisedSample {
                window,
                observation: obs.clone(),
                action: a,
                next_observation: next.clone(),
                reward: t.reward,
                twist,
                expert_action: (0..K).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                expert_value: rng.gen_range(-1.0..1.0),
            });
            if t.done || out.len() == n {
                break;
            }
            obs = next;
            history.push(obs.clone());
        }
    }
    out
}

fn single_step_cfg(n: usize) -> SupervisedConfig {
    SupervisedConfig {
        learning_rate: 1e-3,
        minibatch_size: n,
        epochs: 1,
    }
}

#[test]
fn overfits_a_repeated_transition() {
    for variant in [Variant::Nlm, Variant::Plm] {
        let mut m = model(variant, 3);
        let one = transitions(&m, 1, 3).remove(0);
        let buffer = vec![one; 32];
        let mut opt = SupervisedOptim::new(&m, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = single_step_cfg(buffer.len());
        let mut trace = Vec::new();
        for _ in 0..200 {
            trace.push(supervised_update(&mut m, &mut opt, &buffer, &cfg, &mut rng).unwrap());
        }
        let comps: [(&str, fn(&dreamplan_core::trainer::SupervisedLosses) -> f64); 5] = [
            ("dynamics", |l| l.dynamics),
            ("reward", |l| l.reward),
            ("velocity", |l| l.velocity),
            ("policy", |l| l.policy),
            ("value", |l| l.value),
        ];
        for (name, f) in comps {
            let window_mean = |i: usize| trace[i * 40..(i + 1) * 40].iter().map(f).sum::<f64>() / 40.0;
            for i in 1..5 {
                assert!(
                    window_mean(i) < window_mean(i - 1),
                    "{variant} {name} not decreasing at window {i}"
                );
            }
            assert!(
                f(&trace[199]) < 0.05 * f(&trace[0]),
                "{variant} {name}: {} -> {}",
                f(&trace[0]),
                f(&trace[199])
            );
        }
    }
}

#[test]
fn cloning_loss_is_zero_on_own_actions() {
    let mut m = model(Variant::Nlm, 4);
    let mut buffer = transitions(&m, 64, 4);
    for s in &mut buffer {
        s.expert_action = m.dreamer.act(&s.observation, &[]).unwrap();
    }
    let mut opt = SupervisedOptim::new(&m, 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let l = supervised_update(&mut m, &mut opt, &buffer, &single_step_cfg(64), &mut rng).unwrap();
    assert_eq!(l.policy, 0.0);
}

fn velocity_loss(m: &InternalModel, buffer: &[SupervisedSample]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut zero = 0.0;
    for s in buffer {
        loss += mse(&m.velocity.estimate_window(&s.window).unwrap(), &s.twist).unwrap();
        zero += mse(&[0.0; 3], &s.twist).unwrap();
    }
    (loss / buffer.len() as f64, zero / buffer.len() as f64)
}

#[test]
fn velocity_estimator_descends_and_beats_zero() {
    let mut m = model(Variant::Plm, 5);
    let buffer = transitions(&m, 2000, 5);
    let held = transitions(&m, 500, 6);
    let (init, baseline) = velocity_loss(&m, &buffer);
    let mut opt = SupervisedOptim::new(&m, 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = SupervisedConfig {
        minibatch_size: 64,
        ..SupervisedConfig::default()
    };
    supervised_update(&mut m, &mut opt, &buffer, &cfg, &mut rng).unwrap();
    let (after, _) = velocity_loss(&m, &buffer);
    println!("velocity mse init {init:.4e} predict-zero {baseline:.4e} after one epoch {after:.4e}");
    assert!(after < init);
    for _ in 0..20 {
        supervised_update(&mut m, &mut opt, &buffer, &cfg, &mut rng).unwrap();
    }
    let (held_loss, held_zero) = velocity_loss(&m, &held);
    assert!(held_loss < held_zero, "{held_loss} vs {held_zero}");
}

fn small_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        iterations: 3,
        seed,
        ..TrainConfig::default()
    };
    cfg.ppo.num_envs = 4;
    cfg.ppo.rollout_length = 16;
    cfg.ppo.minibatch_size = 32;
    cfg.model.horizon = 2;
    cfg.model.hidden = vec![16, 16];
    cfg.distill.states = 200;
    cfg.distill.epochs = 2;
    cfg
}

#[test]
fn zero_iterations_returns_initialization() {
    for variant in [Variant::Nlm, Variant::Plm, Variant::Flm] {
        let mut cfg = small_config(9);
        cfg.iterations = 0;
        cfg.model.variant = variant;
        let out = train(&cfg, None).unwrap();
        assert!(out.metrics.is_empty());
        assert!(out.distill.is_none());
        assert_eq!(out.checkpoint.encode(), Checkpoint::initial(&cfg).unwrap().encode());
    }
}

#[test]
fn same_seed_same_metrics() {
    for variant in [Variant::Nlm, Variant::Plm] {
        let mut cfg = small_config(11);
        cfg.model.variant = variant;
        let a = train(&cfg, None).unwrap();
        let b = train(&cfg, None).unwrap();
        assert_eq!(
            serde_json::to_string(&a.metrics).unwrap(),
            serde_json::to_string(&b.metrics).unwrap()
        );
        assert_eq!(a.checkpoint.encode(), b.checkpoint.encode());
        assert_eq!(a.metrics.len(), 3);
        for (i, m) in a.metrics.iter().enumerate() {
            assert_eq!(m.iteration, i + 1);
            assert_eq!(m.bundle_version, i);
        }
    }
    let c = train(&small_config(12), None).unwrap();
    let a = train(&small_config(11), None).unwrap();
    assert_ne!(a.checkpoint.encode(), c.checkpoint.encode());
}

#[test]
fn train_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(13);
    cfg.checkpoint_every = 2;
    let out = train(&cfg, Some(dir.path())).unwrap();
    let lines = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    for line in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["schema"], "dreamplan.metrics");
    }
    assert!(dir.path().join("checkpoints/iter_00002.ckpt").exists());
    assert!(dir.path().join("distill.json").exists());
    let loaded = Checkpoint::load(&dir.path().join("final.ckpt")).unwrap();
    assert_eq!(loaded.encode(), out.checkpoint.encode());
    assert_eq!(Checkpoint::load_config(&dir.path().join("final.ckpt")).unwrap(), cfg);
}

/// Privileged channels feed the critic only: the actor's input layout is
/// built from observation history alone, and two plants that differ only
/// in hidden state yield the same actor input while the critic input moves.
#[test]
fn information_barrier() {
    for variant in [Variant::Nlm, Variant::Plm, Variant::Flm] {
        let mut cfg = small_config(14);
        cfg.model.variant = variant;
        let ckpt = Checkpoint::initial(&cfg).unwrap();
        let b = &ckpt.model.dreamer;
        let layout = b.actor_layout();
        let h = b.dims.horizon;
        let q = b.dims.latent;
        let expected = match variant {
            Variant::Nlm => P + 3 + h * P,
            Variant::Plm => P + 3 + h * P + q,
            Variant::Flm => P + 3 + 2 * q,
        };
        assert_eq!(layout.dim(), expected, "{variant}");
        assert_eq!(ckpt.experts.actor.mean.input_dim(), layout.dim());
        assert_eq!(ckpt.experts.critic.input_dim(), P + PrivilegedObservation::DIM);

        let (e1, o) = Env::new(cfg.env.clone(), 1).unwrap();
        let (mut e2, o2) = Env::new(cfg.env.clone(), 1).unwrap();
        e2.apply_disturbance([0.3, -0.2, 0.1]);
        assert_eq!(o.0, o2.0);
        assert_ne!(e1.privileged().0, e2.privileged().0);
        let actor_input = |obs: &[f64]| {
            let mut hist = ObservationHistory::new(b.dims.history);
            hist.push(obs.to_vec());
            b.actor_input(&hist, &ckpt.model.velocity).unwrap()
        };
        assert_eq!(actor_input(&o.0), actor_input(&o2.0));
        let c1 = ckpt
            .experts
            .critic
            .forward(&[o.0.as_slice(), e1.privileged().0.as_slice()].concat())
            .unwrap();
        let c2 = ckpt
            .experts
            .critic
            .forward(&[o.0.as_slice(), e2.privileged().0.as_slice()].concat())
            .unwrap();
        assert_ne!(c1, c2);
    }
}

#[test]
fn observation_only_actor_sees_the_observation() {
    let mut cfg = small_config(12);
    cfg.model.actor_inputs = ActorInputs::Observation;
    let out = train(&cfg, None).unwrap();
    let ck = &out.checkpoint;
    let p = cfg.env.obs_dim();
    assert_eq!(ck.model.dreamer.actor_layout().dim(), p);
    assert_eq!(ck.experts.actor.mean.input_dim(), p);

    let mut h = ObservationHistory::new(ck.model.dreamer.dims.history);
    let o: Vec<f64> = (0..p).map(|i| i as f64 * 0.01).collect();
    h.push(o.clone());
    assert_eq!(ck.model.dreamer.actor_input(&h, &ck.model.velocity).unwrap(), o);

    let back = Checkpoint::decode(&ck.encode()).unwrap();
    assert_eq!(back.model.dreamer.dims.actor_inputs, ActorInputs::Observation);
    assert_eq!(&back, ck);
}

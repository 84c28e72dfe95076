use dreamplan_core::env::{tilt_from_gravity, EnvConfig, ObsLayout, Twist};
use dreamplan_core::error::Error;
use dreamplan_core::internal_model::{DreamerBundle, DreamerDims, Variant};
use dreamplan_core::planner::*;
use dreamplan_core::tensornet::{mse, mse_grad, Activation, AdamConfig, AdamState, Batch, Layer, Matrix, Mlp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: usize = 4;

fn env() -> EnvConfig {
    EnvConfig::new(K, 0)
}

fn random_bundle(seed: u64, hidden: &[usize]) -> DreamerBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = DreamerDims::new(Variant::Nlm, K, 5, env().action_bound);
    dims.hidden = hidden.to_vec();
    let mut b = DreamerBundle::new(Variant::Nlm, dims, &mut rng).unwrap();
    // Keep dreamed states in a range where the default constraints bite
    // only sometimes.
    for l in b.dynamics.layers_mut().last_mut().into_iter() {
        l.weights.as_mut_slice().iter_mut().for_each(|w| *w *= 0.2);
        l.biases.iter_mut().for_each(|w| *w *= 0.2);
    }
    b
}

fn random_obs(rng: &mut impl Rng, layout: ObsLayout, scale: f64) -> Vec<f64> {
    let mut o: Vec<f64> = (0..layout.dim()).map(|_| rng.gen_range(-scale..scale)).collect();
    let g = layout.gravity().start;
    o[g] = rng.gen_range(-0.1..0.1);
    o[g + 1] = rng.gen_range(-0.1..0.1);
    o[g + 2] = -1.0;
    o
}

fn small_cfg() -> PlannerConfig {
    let mut c = PlannerConfig::for_env(&env());
    c.horizon = 5;
    c.iterations = 3;
    c.samples = 60;
    c.policy_samples = 6;
    c.elites = 12;
    c
}

/// Single layer `out = W x + b`.
fn affine(w: Vec<f64>, rows: usize, cols: usize, b: Vec<f64>) -> Mlp {
    let layer = Layer {
        weights: Matrix::from_vec(rows, cols, w).unwrap(),
        biases: b,
    };
    Mlp::from_layers(vec![layer], vec![]).unwrap()
}

fn constant_bundle(r: f64, v: f64) -> DreamerBundle {
    let dims = DreamerDims::new(Variant::Nlm, K, 5, env().action_bound);
    let p = dims.obs_dim();
    let mut b = DreamerBundle::new(Variant::Nlm, dims, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    b.dynamics = Mlp::zeros(&[p + K, 64, 64, p], Activation::Tanh);
    b.reward = Mlp::zeros(&[p + K, 64, 64, 1], Activation::Tanh);
    b.value = Mlp::zeros(&[p, 64, 64, 1], Activation::Tanh);
    b.reward.layers_mut()[2].biases[0] = r;
    b.value.layers_mut()[2].biases[0] = v;
    b.validate().unwrap();
    b
}

fn with_command(obs: &[f64], layout: ObsLayout, cmd: [f64; 3]) -> Vec<f64> {
    let mut o = obs.to_vec();
    o[layout.command()].copy_from_slice(&cmd);
    o
}

#[test]
fn geometric_return_example() {
    let b = constant_bundle(1.0, 2.0);
    let mut cfg = PlannerConfig::for_env(&env());
    cfg.constraints.clear();
    let obs = vec![0.0; b.layout().dim()];
    let c = score_trajectory(&b, &obs, [0.0; 3], &vec![0.0; 10 * K], [0.0; 3], &cfg).unwrap();
    let g: f64 = 0.99;
    let closed = (1.0 - g.powi(10)) / (1.0 - g) + g.powi(10) * 2.0;
    assert!((c.ret - closed).abs() < 1e-12);
    assert!((c.ret - 11.370557).abs() < 1e-6);
    assert_eq!(c.dream.unwrap().len(), 11);
}

#[test]
fn zero_lambda_ignores_constraints() {
    let b = random_bundle(1, &[32, 32]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let obs = random_obs(&mut rng, b.layout(), 0.5);
    let acts: Vec<f64> = (0..10 * K).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut cfg = PlannerConfig::for_env(&env());
    cfg.lambda = 0.0;
    let with = score_trajectory(&b, &obs, [0.3, 0.1, 0.0], &acts, [0.0; 3], &cfg).unwrap();
    cfg.constraints.clear();
    let without = score_trajectory(&b, &obs, [0.3, 0.1, 0.0], &acts, [0.0; 3], &cfg).unwrap();
    assert_eq!(with.ret, without.ret);
}

/// Written from the objective directly: explicit powers, explicit channel
/// formulas, raw network calls.
fn fold_oracle(
    b: &DreamerBundle,
    obs: &[f64],
    cmd: [f64; 3],
    acts: &[f64],
    target: [f64; 3],
    cfg: &PlannerConfig,
) -> f64 {
    let layout = b.layout();
    let env = env();
    let mut o = with_command(obs, layout, cmd);
    let mut r_sum = 0.0;
    let mut c_sum = 0.0;
    for step in 0..cfg.horizon {
        let a = &acts[step * K..(step + 1) * K];
        let x: Vec<f64> = o.iter().chain(a).copied().collect();
        let w = cfg.gamma.powi(step as i32);
        r_sum += w * b.reward.forward(&x).unwrap()[0];
        let q = &o[layout.joint_pos()];
        let joint: f64 = (0..K).map(|i| (q[i].abs() - env.q_max[i]).max(0.0)).sum();
        let (roll, pitch) = tilt_from_gravity(&o[layout.gravity()]);
        let tilt = (roll.abs() - DEFAULT_TILT_MAX).max(0.0) + (pitch.abs() - DEFAULT_TILT_MAX).max(0.0);
        let dev = (0..3)
            .map(|i| (cmd[i] - target[i]).abs() - cfg.command_deviation[i])
            .fold(f64::NEG_INFINITY, f64::max);
        c_sum += w * (joint + tilt + dev);
        let d = b.dynamics.forward(&x).unwrap();
        for (f, v) in o.iter_mut().enumerate() {
            if !layout.command().contains(&f) {
                *v += d[f];
            }
        }
    }
    let v = b.value.forward(&o).unwrap()[0] * b.dims.value_scale;
    r_sum + cfg.gamma.powi(cfg.horizon as i32) * v - cfg.lambda * c_sum
}

#[test]
fn return_matches_independent_fold() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = PlannerConfig::for_env(&env());
    for seed in 0..20 {
        let b = random_bundle(seed, &[64, 64]);
        let obs = random_obs(&mut rng, b.layout(), 0.6);
        let acts: Vec<f64> = (0..10 * K).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cmd = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.5..0.5),
        ];
        let target = [0.2, -0.1, 0.1];
        let c = score_trajectory(&b, &obs, cmd, &acts, target, &cfg).unwrap();
        let oracle = fold_oracle(&b, &obs, cmd, &acts, target, &cfg);
        assert!((c.ret - oracle).abs() < 1e-10, "seed {seed}: {} vs {oracle}", c.ret);
        assert_eq!(c.feasible, c.constraints.iter().all(|v| *v <= 0.0));
    }
}

#[test]
fn batched_scoring_matches_reference_bitwise() {
    let b = random_bundle(4, &[64, 64]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let obs = random_obs(&mut rng, b.layout(), 0.6);
    let cfg = PlannerConfig::for_env(&env());
    let target = [0.5, 0.0, 0.2];
    let mut planner = Planner::new(&b, cfg.clone()).unwrap();
    let decisions: Vec<Vec<f64>> = (0..70)
        .map(|_| (0..3 + 10 * K).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let batch = planner.score(&obs, target, decisions.clone(), true).unwrap();
    for (d, c) in decisions.iter().zip(&batch) {
        let r = score_trajectory(&b, &obs, [d[0], d[1], d[2]], &d[3..], target, &cfg).unwrap();
        assert_eq!(c.ret.to_bits(), r.ret.to_bits());
        assert_eq!(c.constraints, r.constraints);
        assert_eq!(c.feasible, r.feasible);
        assert_eq!(c.dream, r.dream);
    }
}

#[test]
fn single_precision_scoring_tracks_double() {
    let b = random_bundle(6, &[64, 64]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let obs = random_obs(&mut rng, b.layout(), 0.6);
    let mut cfg = PlannerConfig::for_env(&env());
    let decisions: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..3 + 10 * K).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let a = Planner::new(&b, cfg.clone())
        .unwrap()
        .score(&obs, [0.0; 3], decisions.clone(), false)
        .unwrap();
    cfg.precision = Precision::F32;
    let f = Planner::new(&b, cfg)
        .unwrap()
        .score(&obs, [0.0; 3], decisions, false)
        .unwrap();
    for (x, y) in a.iter().zip(&f) {
        assert!(
            (x.ret - y.ret).abs() < 1e-3 * (1.0 + x.ret.abs()),
            "{} vs {}",
            x.ret,
            y.ret
        );
    }
}

#[test]
fn non_finite_rollout_is_infeasible_minus_infinity() {
    let mut b = constant_bundle(1.0, 2.0);
    b.value.layers_mut()[2].biases[0] = f64::INFINITY;
    let mut cfg = PlannerConfig::for_env(&env());
    cfg.constraints.clear();
    let obs = vec![0.0; b.layout().dim()];
    let c = score_trajectory(&b, &obs, [0.0; 3], &vec![0.0; 10 * K], [0.0; 3], &cfg).unwrap();
    assert_eq!(c.ret, f64::NEG_INFINITY);
    assert!(!c.feasible);
    let mut p = Planner::new(&b, cfg).unwrap();
    let batch = p.score(&obs, [0.0; 3], vec![vec![0.0; 3 + 10 * K]], false).unwrap();
    assert_eq!(batch[0].ret, f64::NEG_INFINITY);
    assert!(!batch[0].feasible);
    let json = serde_json::to_string(&batch[0]).unwrap();
    let back: Candidate = serde_json::from_str(&json).unwrap();
    assert_eq!(back.ret, f64::NEG_INFINITY);
    assert_eq!(back.violation, f64::INFINITY);
}

#[test]
fn policy_candidates() {
    let b = random_bundle(8, &[32, 32]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let obs = random_obs(&mut rng, b.layout(), 0.5);
    let target = [0.4, -0.2, 0.1];
    let cfg = PlannerConfig::for_env(&env());
    let mut p = Planner::new(&b, cfg.clone()).unwrap();

    let det = p.sample_policy_trajs(&obs, target, 1, 11, 0).unwrap();
    assert_eq!(det.len(), 1);
    let roll = b.nlm_rollout(&with_command(&obs, b.layout(), target), 10).unwrap();
    assert_eq!(det[0].command(), target);
    let flat: Vec<f64> = roll.actions.concat();
    assert_eq!(det[0].actions(), &flat[..]);
    assert_eq!(det[0].source, Source::Policy);

    let many = p.sample_policy_trajs(&obs, target, 30, 11, 0).unwrap();
    assert_eq!(many[0], det[0]);
    assert!(many[1..].iter().all(|c| c.decision != det[0].decision));
    let bounds = p.bounds(target);
    for c in &many {
        let mut d = c.decision.clone();
        bounds.clamp(&mut d);
        assert_eq!(d, c.decision);
    }

    let mut still = cfg;
    still.policy_action_jitter = 0.0;
    still.policy_command_jitter = [0.0; 3];
    let mut q = Planner::new(&b, still).unwrap();
    let same = q.sample_policy_trajs(&obs, target, 8, 11, 0).unwrap();
    assert!(same
        .iter()
        .all(|c| c.decision == same[0].decision && c.ret == same[0].ret));
}

#[test]
fn gaussian_draws() {
    let dim = 3 + 10 * K;
    let mean: Vec<f64> = (0..dim).map(|i| 0.1 * ((i % 7) as f64 - 3.0)).collect();
    let dist = PlanDistribution {
        mean: mean.clone(),
        std: vec![0.02; dim],
    };
    let bounds = DecisionBounds {
        target: [0.0; 3],
        command_deviation: [1.0, 1.0, 0.5],
        action_bound: 1.0,
    };
    let m = 2000;
    let draws = sample_gaussian_trajs(&dist, m, &bounds, 3, 0);
    assert_eq!(draws.len(), m);
    for i in 0..dim {
        let avg = draws.iter().map(|d| d[i]).sum::<f64>() / m as f64;
        assert!((avg - mean[i]).abs() <= 3.0 * 0.02 / (m as f64).sqrt(), "component {i}");
    }
    assert_eq!(draws, sample_gaussian_trajs(&dist, m, &bounds, 3, 0));
    assert_ne!(draws, sample_gaussian_trajs(&dist, m, &bounds, 4, 0));

    let wide = PlanDistribution {
        mean,
        std: vec![5.0; dim],
    };
    for d in sample_gaussian_trajs(&wide, 500, &bounds, 1, 2) {
        for i in 0..3 {
            assert!(d[i].abs() <= bounds.command_deviation[i]);
        }
        assert!(d[3..].iter().all(|a| a.abs() <= 1.0));
    }
}

fn cand(decision: Vec<f64>, ret: f64, feasible: bool, violation: f64) -> Candidate {
    Candidate {
        decision,
        ret,
        constraints: vec![],
        feasible,
        violation,
        source: Source::Gaussian,
        dream: None,
    }
}

#[test]
fn elite_update_on_identical_candidates() {
    let cfg = small_cfg();
    let x = vec![0.3, -0.2, 0.1, 0.5, -0.5];
    let prev = PlanDistribution {
        mean: vec![0.0; 5],
        std: vec![1.0; 5],
    };
    let cands: Vec<Candidate> = (0..20).map(|_| cand(x.clone(), 1.5, true, 0.0)).collect();
    let u = elite_update(&cands, &cfg, &prev).unwrap();
    assert_eq!(u.elite_fit.mean, x);
    assert_eq!(u.elite_fit.std, vec![cfg.std_min; 5]);
    assert_eq!(u.elites.len(), cfg.elites);
    for i in 0..5 {
        assert!((u.distribution.mean[i] - 0.95 * x[i]).abs() < 1e-15);
    }
}

#[test]
fn elite_update_empty_is_an_error() {
    let prev = PlanDistribution {
        mean: vec![0.0; 2],
        std: vec![1.0; 2],
    };
    assert!(matches!(
        elite_update(&[], &small_cfg(), &prev),
        Err(Error::EmptyCandidates)
    ));
}

#[test]
fn elite_update_uniform_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut cfg = small_cfg();
    cfg.temperature = 1e9;
    let cands: Vec<Candidate> = (0..40)
        .map(|_| {
            cand(
                (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                rng.gen_range(-5.0..5.0),
                true,
                0.0,
            )
        })
        .collect();
    let prev = PlanDistribution {
        mean: vec![0.0; 6],
        std: vec![1.0; 6],
    };
    let u = elite_update(&cands, &cfg, &prev).unwrap();
    for i in 0..6 {
        let avg = u.elites.iter().map(|&j| cands[j].decision[i]).sum::<f64>() / u.elites.len() as f64;
        assert!((u.elite_fit.mean[i] - avg).abs() < 1e-6);
    }
}

#[test]
fn elite_fallback_prefers_feasible_then_low_violation() {
    let mut cfg = small_cfg();
    cfg.elites = 3;
    let prev = PlanDistribution {
        mean: vec![0.0],
        std: vec![1.0],
    };
    let cands = vec![
        cand(vec![0.0], 9.0, false, 0.5),
        cand(vec![1.0], 1.0, true, 0.0),
        cand(vec![2.0], 5.0, false, 0.1),
        cand(vec![3.0], 7.0, false, 0.1),
        cand(vec![4.0], f64::NEG_INFINITY, false, f64::INFINITY),
    ];
    let u = elite_update(&cands, &cfg, &prev).unwrap();
    assert_eq!(u.elites, vec![1, 3, 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn elite_update_is_shift_invariant(
        rets in prop::collection::vec(-10.0f64..10.0, 5..40),
        feas in prop::collection::vec(any::<bool>(), 40),
        shift in -50.0f64..50.0,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_cfg();
        let cands: Vec<Candidate> = rets
            .iter()
            .zip(&feas)
            .map(|(&r, &f)| cand((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), r, f, if f { 0.0 } else { rng.gen_range(0.0..1.0) }))
            .collect();
        let shifted: Vec<Candidate> = cands.iter().map(|c| Candidate { ret: c.ret + shift, ..c.clone() }).collect();
        let prev = PlanDistribution { mean: vec![0.1; 4], std: vec![0.5; 4] };
        let a = elite_update(&cands, &cfg, &prev).unwrap();
        let b = elite_update(&shifted, &cfg, &prev).unwrap();
        prop_assert_eq!(&a.elites, &b.elites);
        for (x, y) in a.weights.iter().zip(&b.weights) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.elite_fit.mean.iter().zip(&b.elite_fit.mean).chain(a.elite_fit.std.iter().zip(&b.elite_fit.std)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn elite_update_respects_floor(
        seed in 0u64..1000,
        n in 1usize..50,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_cfg();
        let cands: Vec<Candidate> = (0..n)
            .map(|_| cand((0..3).map(|_| rng.gen_range(-0.01..0.01)).collect(), rng.gen_range(-1.0..1.0), rng.gen_bool(0.5), 0.3))
            .collect();
        let prev = PlanDistribution { mean: vec![0.0; 3], std: vec![0.02; 3] };
        let u = elite_update(&cands, &cfg, &prev).unwrap();
        prop_assert!(u.distribution.std.iter().all(|s| *s >= cfg.std_min));
        prop_assert!(u.distribution.validate(3, cfg.std_min).is_ok());
        let total: f64 = u.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn degenerate_config_returns_policy_rollout() {
    let b = random_bundle(13, &[32, 32]);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let obs = random_obs(&mut rng, b.layout(), 0.5);
    let mut cfg = PlannerConfig::for_env(&env());
    cfg.samples = 0;
    cfg.policy_samples = 1;
    cfg.iterations = 1;
    cfg.elites = 1;
    cfg.constraints.clear();
    let target = Twist::new(0.3, 0.1, -0.2);
    let out = Planner::new(&b, cfg).unwrap().plan(&obs, target, None, 5).unwrap();
    let roll = b
        .nlm_rollout(&with_command(&obs, b.layout(), target.to_array()), 10)
        .unwrap();
    assert_eq!(out.command, target);
    assert_eq!(out.action, roll.actions[0]);
    assert!(out.feasible);
    assert_eq!(out.diagnostics.chosen, Chosen::Distribution);
}

fn plan_random(seed: u64, b: &DreamerBundle, cfg: &PlannerConfig, record: bool) -> (Vec<f64>, [f64; 3], PlanOutput) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = random_obs(&mut rng, b.layout(), 0.6);
    let target = [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
    ];
    let mut p = Planner::new(b, cfg.clone()).unwrap();
    p.set_record_candidates(record);
    let out = p.plan(&obs, Twist::from_array(target), None, seed).unwrap();
    (obs, target, out)
}

#[test]
fn plan_properties_over_seeds() {
    let b = random_bundle(15, &[16, 16]);
    let cfg = small_cfg();
    let layout = b.layout();
    let mut saw = [0usize; 2];
    for seed in 0..60 {
        let (obs, target, out) = plan_random(seed, &b, &cfg, true);
        let d = &out.diagnostics;
        let pools = d.candidates.as_ref().unwrap();
        assert_eq!(pools.len(), cfg.iterations);
        assert_eq!(d.best_return.len(), cfg.iterations);

        let flat: Vec<f64> = d.best_return.iter().flatten().copied().collect();
        assert!(flat.windows(2).all(|w| w[1] >= w[0]), "best return decreased: {flat:?}");
        if let Some(first) = d.best_return.iter().position(|r| r.is_some()) {
            assert!(d.best_return[first..].iter().all(|r| r.is_some()));
        }

        let any_feasible = pools.iter().flatten().any(|c| c.feasible);
        saw[any_feasible as usize] += 1;
        if any_feasible {
            assert!(
                out.feasible,
                "seed {seed}: feasible candidates existed but plan is infeasible"
            );
        } else {
            assert_eq!(d.chosen, Chosen::MinimumViolation);
            assert!(!out.feasible);
        }

        for pool in pools {
            for c in pool {
                let r = score_trajectory(&b, &obs, c.command(), c.actions(), target, &cfg).unwrap();
                let sound = r.constraints.iter().zip(&cfg.constraints).all(|(v, s)| *v <= s.bound);
                assert_eq!(c.feasible, sound);
                let dream = c.dream.as_ref().unwrap();
                assert_eq!(dream.len(), cfg.horizon + 1);
                for o in dream {
                    assert_eq!(&o[layout.command()], &c.decision[..3]);
                }
            }
        }

        let plan = &d.plan;
        assert_eq!(out.command.to_array(), plan.command());
        assert_eq!(out.action, plan.actions()[..K]);
        assert_eq!(plan.dream.as_ref().unwrap().len(), cfg.horizon + 1);
    }
    assert!(
        saw[0] > 0 && saw[1] > 0,
        "feasibility split {saw:?} leaves a branch untested"
    );
}

#[test]
fn plan_is_deterministic() {
    let b = random_bundle(16, &[16, 16]);
    let cfg = small_cfg();
    let (_, _, a) = plan_random(3, &b, &cfg, false);
    let (_, _, c) = plan_random(3, &b, &cfg, false);
    assert_eq!(a, c);
    let (_, _, d) = plan_random(4, &b, &cfg, false);
    assert_ne!(a.action, d.action);
}

#[test]
fn warm_start_is_a_receding_shift() {
    let b = random_bundle(17, &[16, 16]);
    let mut cfg = small_cfg();
    cfg.constraints.clear();
    let (obs, target, out) = plan_random(9, &b, &cfg, false);
    let dist = &out.final_distribution;
    let w = &out.warm;
    let n = dist.mean.len();
    assert_eq!(w.mean.len(), n);
    assert_eq!(&w.mean[..3], &dist.mean[..3]);
    assert_eq!(&w.mean[3..n - K], &dist.mean[3 + K..]);
    assert_eq!(&w.std[..n - K], &[&dist.std[..3], &dist.std[3 + K..]].concat()[..]);
    assert!(w.std[n - K..].iter().all(|s| *s == cfg.init_std_action));

    assert_eq!(out.diagnostics.chosen, Chosen::Distribution);
    let last = out.diagnostics.plan.dream.as_ref().unwrap().last().unwrap().clone();
    assert_eq!(&w.mean[n - K..], &b.act(&last, &[]).unwrap()[..]);

    let mut p = Planner::new(&b, cfg.clone()).unwrap();
    let next = p.plan(&obs, Twist::from_array(target), Some(w), 10).unwrap();
    assert!(next.final_distribution.validate(n, cfg.std_min).is_ok());
    let bad = PlanDistribution {
        mean: vec![0.0; n - 1],
        std: vec![1.0; n - 1],
    };
    assert!(p.plan(&obs, Twist::from_array(target), Some(&bad), 10).is_err());
}

#[test]
fn infeasible_everywhere_reports_minimum_violation() {
    let b = random_bundle(18, &[16, 16]);
    let mut cfg = small_cfg();
    cfg.constraints = vec![Constraint::custom(
        "always",
        std::sync::Arc::new(|_: &StepInput| 1.0),
        0.0,
    )];
    let (_, _, out) = plan_random(1, &b, &cfg, true);
    assert!(!out.feasible);
    assert_eq!(out.diagnostics.chosen, Chosen::MinimumViolation);
    assert!(out.diagnostics.best_return.iter().all(Option::is_none));
    let min = out
        .diagnostics
        .candidates
        .as_ref()
        .unwrap()
        .iter()
        .flatten()
        .map(|c| c.violation)
        .fold(f64::INFINITY, f64::min);
    assert!(out.diagnostics.plan.violation <= min + 1e-12);
}

#[test]
fn planner_rejects_bad_inputs() {
    let b = random_bundle(19, &[16, 16]);
    let mut p = Planner::new(&b, small_cfg()).unwrap();
    let dim = b.layout().dim();
    assert!(p.plan(&vec![0.0; dim - 1], Twist::default(), None, 0).is_err());
    let mut o = vec![0.0; dim];
    o[0] = f64::NAN;
    assert!(p.plan(&o, Twist::default(), None, 0).is_err());
    let mut bad = small_cfg();
    bad.elites = 1000;
    assert!(Planner::new(&b, bad).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let plm = DreamerBundle::new(Variant::Plm, DreamerDims::new(Variant::Plm, K, 5, 1.0), &mut rng).unwrap();
    assert!(matches!(Planner::new(&plm, small_cfg()), Err(Error::Variant { .. })));
}

#[test]
fn diagnostics_round_trip_through_json() {
    let b = random_bundle(20, &[16, 16]);
    let (_, _, out) = plan_random(2, &b, &small_cfg(), true);
    let s = serde_json::to_string(&out.diagnostics).unwrap();
    let back: PlanDiagnostics = serde_json::from_str(&s).unwrap();
    assert_eq!(back.best_return, out.diagnostics.best_return);
    assert_eq!(back.plan.decision, out.diagnostics.plan.decision);
    assert_eq!(back.candidates.as_ref().map(Vec::len), Some(3));
}

/// Linear plant for the exhaustive-search comparison.
struct LinearPlant {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    command: std::ops::Range<usize>,
}

impl LinearPlant {
    fn delta(&self, o: &[f64], u: &[f64]) -> Vec<f64> {
        (0..o.len())
            .map(|f| {
                if self.command.contains(&f) {
                    return 0.0;
                }
                let mut v = 0.0;
                for (j, x) in o.iter().enumerate() {
                    v += self.a[f][j] * x;
                }
                for (j, x) in u.iter().enumerate() {
                    v += self.b[f][j] * x;
                }
                v
            })
            .collect()
    }
}

fn fit_linear_dynamics(plant: &LinearPlant, p: usize, k: usize, rng: &mut ChaCha8Rng) -> (Mlp, f64) {
    let mut net = Mlp::zeros(&[p + k, p], Activation::Tanh);
    let mut adam = AdamState::new(
        &net,
        AdamConfig {
            lr: 1e-2,
            ..Default::default()
        },
    );
    let sample = |rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..p + k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = plant.delta(&x[..p], &x[p..]);
        (x, d)
    };
    let holdout: Vec<(Vec<f64>, Vec<f64>)> = (0..256).map(|_| sample(rng)).collect();
    for it in 0..3000 {
        if it == 2000 {
            adam.config.lr = 1e-3;
        }
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..128).map(|_| sample(rng)).collect();
        let xs: Vec<&Vec<f64>> = batch.iter().map(|(x, _)| x).collect();
        let input = Batch::from_samples(&xs).unwrap();
        let trace = net.forward_batch(&input).unwrap();
        let pred = trace.output().samples();
        let mut up = Batch::zeros(p, batch.len());
        for (l, ((_, t), y)) in batch.iter().zip(&pred).enumerate() {
            for (f, g) in mse_grad(y, t).unwrap().into_iter().enumerate() {
                up.set(f, l, g / batch.len() as f64);
            }
        }
        let (g, _) = net.backward_batch(&trace, &up).unwrap();
        adam.step(&mut net, &g).unwrap();
    }
    let err = holdout
        .iter()
        .map(|(x, t)| mse(&net.forward(x).unwrap(), t).unwrap())
        .sum::<f64>()
        / holdout.len() as f64;
    (net, err)
}

#[test]
fn planner_matches_exhaustive_grid_search() {
    let k = 2;
    let h = 3;
    let layout = ObsLayout::new(k);
    let p = layout.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let plant = LinearPlant {
        a: (0..p)
            .map(|_| (0..p).map(|_| rng.gen_range(-0.1..0.1)).collect())
            .collect(),
        b: (0..p)
            .map(|_| (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect(),
        command: layout.command(),
    };
    let (dynamics, err) = fit_linear_dynamics(&plant, p, k, &mut rng);
    assert!(err < 1e-6, "one-step error {err}");

    let bound = 1.0;
    let mut dims = DreamerDims::new(Variant::Nlm, k, h, bound);
    dims.hidden = vec![];
    let base = DreamerBundle {
        variant: Variant::Nlm,
        dims,
        dynamics,
        policy: Mlp::zeros(&[p, k], Activation::Tanh),
        reward: Mlp::zeros(&[p + k, 1], Activation::Tanh),
        value: Mlp::zeros(&[p, 1], Activation::Tanh),
        encoder: None,
    };
    base.validate().unwrap();

    let mut cfg = PlannerConfig::for_env(&EnvConfig::new(k, 0));
    cfg.horizon = h;
    cfg.command_deviation = [0.0; 3];
    // Global search over the box rather than refinement around π.
    cfg.init_std_action = 0.5 * bound;
    cfg.constraints.clear();
    let grid = [-bound, 0.0, bound];
    let obs = vec![0.0; p];

    let mut hits = 0;
    for trial in 0..100u64 {
        let mut b = base.clone();
        let wr: Vec<f64> = (0..p + k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wv: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        b.reward = affine(wr, 1, p + k, vec![0.0]);
        b.value = affine(wv, 1, p, vec![0.0]);

        let mut best = f64::NEG_INFINITY;
        for code in 0..3usize.pow((h * k) as u32) {
            let mut c = code;
            let acts: Vec<f64> = (0..h * k)
                .map(|_| {
                    let a = grid[c % 3];
                    c /= 3;
                    a
                })
                .collect();
            let r = score_trajectory(&b, &obs, [0.0; 3], &acts, [0.0; 3], &cfg).unwrap();
            best = best.max(r.ret);
        }
        let out = Planner::new(&b, cfg.clone())
            .unwrap()
            .plan(&obs, Twist::default(), None, trial)
            .unwrap();
        let got = out.diagnostics.plan.ret;

        if best - got <= 0.05 * best.abs() {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100 within 5% of the grid optimum");
}

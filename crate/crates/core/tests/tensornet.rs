use dreamplan_core::tensornet::{Activation, Batch, Mlp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `Σ_j u_j y_j(x)` for the network as given.
fn objective(net: &Mlp, x: &[f64], u: &[f64]) -> f64 {
    net.forward(x).unwrap().iter().zip(u).map(|(y, w)| y * w).sum()
}

/// Relative error with a floor so exactly-zero gradients compare absolutely.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between backward and central differences over
/// every weight, bias and input coordinate.
fn max_fd_error(net: &Mlp, x: &[f64], u: &[f64], eps: f64) -> f64 {
    let (g, dx) = net.backward(x, u).unwrap();
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for l in 0..net.layers().len() {
        let n_w = net.layers()[l].weights.as_slice().len();
        for i in 0..n_w {
            let orig = net.layers()[l].weights.as_slice()[i];
            probe.layers_mut()[l].weights.as_mut_slice()[i] = orig + eps;
            let up = objective(&probe, x, u);
            probe.layers_mut()[l].weights.as_mut_slice()[i] = orig - eps;
            let down = objective(&probe, x, u);
            probe.layers_mut()[l].weights.as_mut_slice()[i] = orig;
            worst = worst.max(rel(g.layers[l].weights.as_slice()[i], (up - down) / (2.0 * eps)));
        }
        for i in 0..net.layers()[l].biases.len() {
            let orig = net.layers()[l].biases[i];
            probe.layers_mut()[l].biases[i] = orig + eps;
            let up = objective(&probe, x, u);
            probe.layers_mut()[l].biases[i] = orig - eps;
            let down = objective(&probe, x, u);
            probe.layers_mut()[l].biases[i] = orig;
            worst = worst.max(rel(g.layers[l].biases[i], (up - down) / (2.0 * eps)));
        }
    }
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + eps;
        let up = objective(net, &xp, u);
        xp[i] = x[i] - eps;
        let down = objective(net, &xp, u);
        xp[i] = x[i];
        worst = worst.max(rel(dx[i], (up - down) / (2.0 * eps)));
    }
    worst
}

fn random_net(rng: &mut ChaCha8Rng) -> (Mlp, Vec<f64>, Vec<f64>) {
    let depth = rng.gen_range(0..=3);
    let mut sizes = vec![rng.gen_range(1..=8)];
    sizes.extend((0..depth).map(|_| rng.gen_range(1..=16)));
    sizes.push(rng.gen_range(1..=5));
    let act = if rng.gen_bool(0.5) {
        Activation::Tanh
    } else {
        Activation::Elu
    };
    let net = Mlp::new(&sizes, act, rng);
    let x = (0..sizes[0]).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let u = (0..*sizes.last().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (net, x, u)
}

#[test]
fn backward_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..25 {
        let (net, x, u) = random_net(&mut rng);
        let e = max_fd_error(&net, &x, &u, 1e-6);
        assert!(e < 1e-4, "{:?} {:?}: {e}", net.sizes(), net.activations());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradients_agree_with_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, x, u) = random_net(&mut rng);
        prop_assert!(max_fd_error(&net, &x, &u, 1e-6) < 1e-4);
    }

    #[test]
    fn batch_forward_matches_single(seed in any::<u64>(), lanes in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, _, _) = random_net(&mut rng);
        let xs: Vec<Vec<f64>> = (0..lanes)
            .map(|_| (0..net.input_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let trace = net.forward_batch(&Batch::from_samples(&xs).unwrap()).unwrap();
        for (j, x) in xs.iter().enumerate() {
            prop_assert_eq!(trace.output().sample(j), net.forward(x).unwrap());
        }
    }
}

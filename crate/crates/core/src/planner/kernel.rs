use super::constraints::Constraint;
use crate::env::ObsLayout;
use crate::internal_model::DreamerBundle;
use crate::tensornet::{padded_lanes, FrozenMlp, Real, Scratch};

/// Shared inputs of one batched rollout.
pub(crate) struct RolloutSpec<'a> {
    pub observation: &'a [f64],
    pub target: [f64; 3],
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub constraints: &'a [Constraint],
}

/// How actions are produced along the rollout.
pub(crate) enum Actions<'a> {
    /// Read from each decision vector.
    Given,
    /// `clamp(π(ô_k))`, plus `clamp(· + ε_k)` for lanes carrying jitter.
    Policy(&'a [Option<Vec<f64>>]),
}

pub(crate) struct Scored {
    pub returns: Vec<f64>,
    /// `[lane][channel]` discounted constraint sums.
    pub constraints: Vec<Vec<f64>>,
    /// `[lane][step]` dreamed observations, when recorded.
    pub dreams: Option<Vec<Vec<Vec<f64>>>>,
}

/// Frozen NLM heads plus reusable buffers, in precision `T`.
pub(crate) struct Kernel<T: Real> {
    dynamics: FrozenMlp<T>,
    reward: FrozenMlp<T>,
    value: FrozenMlp<T>,
    policy: FrozenMlp<T>,
    value_scale: f64,
    action_bound: T,
    layout: ObsLayout,
    x: Vec<T>,
    delta: Vec<T>,
    head: Vec<T>,
    act: Vec<T>,
    step_c: Vec<f64>,
    scratch: Scratch<T>,
}

#[inline(always)]
fn clamp<T: Real>(x: T, b: T) -> T {
    if x > b {
        b
    } else if x < T::ZERO - b {
        T::ZERO - b
    } else {
        x
    }
}

impl<T: Real> Kernel<T> {
    pub fn new(bundle: &DreamerBundle) -> Self {
        Self {
            dynamics: FrozenMlp::from_mlp(&bundle.dynamics),
            reward: FrozenMlp::from_mlp(&bundle.reward),
            value: FrozenMlp::from_mlp(&bundle.value),
            policy: FrozenMlp::from_mlp(&bundle.policy),
            value_scale: bundle.dims.value_scale,
            action_bound: T::from_f64(bundle.dims.action_bound),
            layout: bundle.layout(),
            x: Vec::new(),
            delta: Vec::new(),
            head: Vec::new(),
            act: Vec::new(),
            step_c: Vec::new(),
            scratch: Scratch::default(),
        }
    }

    /// Rolls every decision vector `[ν ⊕ a_0 ⊕ … ⊕ a_{H−1}]` through the
    /// dynamics from `ô_t` (command slice replaced by `ν`) and scores it.
    /// With [`Actions::Policy`] the action block is written back.
    pub fn rollout(
        &mut self,
        spec: &RolloutSpec,
        decisions: &mut [Vec<f64>],
        actions: Actions,
        record: bool,
    ) -> Scored {
        let n = decisions.len();
        let lanes = padded_lanes(n);
        let p = self.layout.dim();
        let k = self.layout.joints;
        let h = spec.horizon;
        let cmd_rows = self.layout.command();
        let width = p + k;
        self.x.clear();
        self.x.resize(width * lanes, T::ZERO);
        self.delta.resize(p * lanes, T::ZERO);
        self.head.resize(lanes.max(k * lanes), T::ZERO);
        self.act.resize(k * lanes, T::ZERO);
        self.step_c.resize(n, 0.0);

        let commands: Vec<[f64; 3]> = decisions.iter().map(|d| [d[0], d[1], d[2]]).collect();
        for f in 0..p {
            let row = &mut self.x[f * lanes..f * lanes + n];
            if cmd_rows.contains(&f) {
                let c = f - cmd_rows.start;
                for (v, cmd) in row.iter_mut().zip(&commands) {
                    *v = T::from_f64(cmd[c]);
                }
            } else {
                row.fill(T::from_f64(spec.observation[f]));
            }
        }

        let channels = spec.constraints.len();
        let mut returns = vec![0.0; n];
        let mut csum = vec![vec![0.0; channels]; n];
        let mut dreams = record.then(|| vec![Vec::with_capacity(h + 1); n]);
        let mut disc = 1.0;
        for step in 0..h {
            if let Some(d) = dreams.as_mut() {
                self.push_dream(d, lanes, p);
            }
            let a0 = 3 + step * k;
            match actions {
                Actions::Given => {
                    for i in 0..k {
                        let row = &mut self.x[(p + i) * lanes..(p + i) * lanes + n];
                        for (v, d) in row.iter_mut().zip(decisions.iter()) {
                            *v = T::from_f64(d[a0 + i]);
                        }
                    }
                }
                Actions::Policy(jitter) => {
                    self.policy
                        .forward_batch(&self.x, lanes, &mut self.act, &mut self.scratch);
                    for i in 0..k {
                        for j in 0..n {
                            let mut a = clamp(self.act[i * lanes + j], self.action_bound);
                            if let Some(e) = &jitter[j] {
                                a = clamp(a + T::from_f64(e[step * k + i]), self.action_bound);
                            }
                            self.x[(p + i) * lanes + j] = a;
                            decisions[j][a0 + i] = a.to_f64();
                        }
                    }
                }
            }

            self.dynamics
                .forward_batch(&self.x, lanes, &mut self.delta, &mut self.scratch);
            self.reward
                .forward_batch(&self.x, lanes, &mut self.head, &mut self.scratch);
            for (r, y) in returns.iter_mut().zip(&self.head[..n]) {
                *r += disc * y.to_f64();
            }
            for (c, con) in spec.constraints.iter().enumerate() {
                con.step_values(
                    self.layout,
                    &self.x,
                    lanes,
                    p,
                    &commands,
                    &spec.target,
                    &mut self.step_c,
                );
                for (s, v) in csum.iter_mut().zip(&self.step_c) {
                    s[c] += disc * v;
                }
            }
            for f in 0..p {
                if cmd_rows.contains(&f) {
                    continue;
                }
                let (o, d) = (
                    &mut self.x[f * lanes..f * lanes + n],
                    &self.delta[f * lanes..f * lanes + n],
                );
                for (o, d) in o.iter_mut().zip(d) {
                    *o = *o + *d;
                }
            }
            disc *= spec.gamma;
        }
        if let Some(d) = dreams.as_mut() {
            self.push_dream(d, lanes, p);
        }

        self.value
            .forward_batch(&self.x, lanes, &mut self.head, &mut self.scratch);
        for j in 0..n {
            let v = self.head[j].to_f64() * self.value_scale;
            returns[j] = finish(returns[j], disc, v, &csum[j], spec.lambda);
        }
        Scored {
            returns,
            constraints: csum,
            dreams,
        }
    }

    fn push_dream(&self, dreams: &mut [Vec<Vec<f64>>], lanes: usize, p: usize) {
        for (j, d) in dreams.iter_mut().enumerate() {
            d.push((0..p).map(|f| self.x[f * lanes + j].to_f64()).collect());
        }
    }

    /// `clamp(π(o))` for one observation.
    pub fn act(&mut self, obs: &[f64]) -> Vec<f64> {
        let lanes = padded_lanes(1);
        let p = self.layout.dim();
        let k = self.layout.joints;
        self.x.clear();
        self.x.resize(p * lanes, T::ZERO);
        for (f, v) in obs.iter().enumerate() {
            self.x[f * lanes] = T::from_f64(*v);
        }
        self.act.resize(k * lanes, T::ZERO);
        self.policy
            .forward_batch(&self.x, lanes, &mut self.act, &mut self.scratch);
        (0..k)
            .map(|i| clamp(self.act[i * lanes], self.action_bound).to_f64())
            .collect()
    }
}

/// `Σγ^k r_k + γ^H V − λ Σ_c C_c`, with any non-finite term sending the
/// return to −∞.
pub(crate) fn finish(reward_sum: f64, disc: f64, value: f64, constraints: &[f64], lambda: f64) -> f64 {
    let mut c = 0.0;
    for v in constraints {
        c += v;
    }
    let r = reward_sum + disc * value - lambda * c;
    if r.is_finite() && c.is_finite() {
        r
    } else {
        f64::NEG_INFINITY
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EnvConfig, EnvState, Twist};

/// `log(x / δ)` for `x ≥ δ`, continued below `δ` by the quadratic that
/// matches value and slope at `δ`, so it stays finite for every `x`.
pub fn relaxed_log_barrier(x: f64, delta: f64) -> f64 {
    if x >= delta {
        (x / delta).ln()
    } else {
        let r = (x - 2.0 * delta) / delta;
        -0.5 * (r * r - 1.0)
    }
}

/// Weighted reward terms; penalties are stored with their sign applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub orientation: f64,
    pub action_rate: f64,
    pub joint_vel: f64,
    pub barrier: f64,
}

impl RewardTerms {
    pub const NAMES: [&'static str; 6] = [
        "lin_vel",
        "ang_vel",
        "orientation",
        "action_rate",
        "joint_vel",
        "barrier",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.lin_vel,
            self.ang_vel,
            self.orientation,
            self.action_rate,
            self.joint_vel,
            self.barrier,
        ]
    }

    pub fn total(&self) -> f64 {
        self.values().iter().sum()
    }

    pub fn to_map(&self) -> BTreeMap<&'static str, f64> {
        Self::NAMES.into_iter().zip(self.values()).collect()
    }
}

/// Reward of arriving in `s` after applying `action` (previous action
/// `prev_action`) while tracking `cmd`.
pub fn reward(cfg: &EnvConfig, s: &EnvState, action: &[f64], prev_action: &[f64], cmd: &Twist) -> (f64, RewardTerms) {
    let w = &cfg.reward;
    let lin_err = (s.twist[0] - cmd.vx).powi(2) + (s.twist[1] - cmd.vy).powi(2);
    let ang_err = (s.twist[2] - cmd.wz).powi(2);
    let tilt = s.tilt[0].powi(2) + s.tilt[1].powi(2);
    let rate: f64 = action.iter().zip(prev_action).map(|(a, b)| (a - b).powi(2)).sum();
    let joint_vel: f64 = s.qd.iter().map(|v| v * v).sum();
    let barrier: f64 = (0..cfg.joints)
        .map(|i| {
            let margin = cfg.q_max[i] - (s.q[i] - cfg.q_nominal[i]).abs();
            relaxed_log_barrier(margin, w.barrier_delta)
        })
        .sum();
    let terms = RewardTerms {
        lin_vel: w.lin_vel * (-lin_err / w.lin_vel_sigma).exp(),
        ang_vel: w.ang_vel * (-ang_err / w.ang_vel_sigma).exp(),
        orientation: -w.orientation * tilt,
        action_rate: -w.action_rate * rate,
        joint_vel: -w.joint_vel * joint_vel,
        barrier: w.barrier * barrier,
    };
    (terms.total(), terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::NoiseLevel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn barrier_is_c1_at_delta() {
        let d = 0.05;
        assert_eq!(relaxed_log_barrier(d, d), 0.0);
        let h = 1e-7;
        let left = (relaxed_log_barrier(d, d) - relaxed_log_barrier(d - h, d)) / h;
        let right = (relaxed_log_barrier(d + h, d) - relaxed_log_barrier(d, d)) / h;
        assert!((left - right).abs() < 1e-4);
        assert!(relaxed_log_barrier(-10.0, d).is_finite());
    }

    #[test]
    fn perfect_tracking_at_rest() {
        let mut cfg = EnvConfig::new(4, 0);
        cfg.noise = NoiseLevel::None;
        let mut s = EnvState::nominal(&cfg);
        s.twist = [0.4, -0.2, 0.3];
        let a = [0.1, 0.0, -0.2, 0.05];
        let (total, _) = reward(&cfg, &s, &a, &a, &Twist::new(0.4, -0.2, 0.3));
        let w = cfg.reward;
        let expected = w.lin_vel + w.ang_vel + w.barrier * 4.0 * (0.45f64 / 0.05).ln();
        assert!((total - expected).abs() < 1e-12);
    }

    #[test]
    fn tracking_terms_vanish_for_huge_error() {
        let cfg = EnvConfig::new(4, 0);
        let mut s = EnvState::nominal(&cfg);
        s.twist = [1e6, -1e6, 1e6];
        let (_, terms) = reward(&cfg, &s, &[0.0; 4], &[0.0; 4], &Twist::ZERO);
        assert_eq!(terms.lin_vel, 0.0);
        assert_eq!(terms.ang_vel, 0.0);
    }

    #[test]
    fn random_inputs_match_direct_formula() {
        let cfg = EnvConfig::new(4, 3);
        let w = cfg.reward;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let mut s = EnvState::nominal(&cfg);
            for i in 0..4 {
                s.q[i] = cfg.q_nominal[i] + rng.gen_range(-0.7..0.7);
                s.qd[i] = rng.gen_range(-3.0..3.0);
            }
            s.twist = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            s.tilt = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ap: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c = Twist::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );

            let mut oracle = w.lin_vel
                * (-((s.twist[0] - c.vx).powi(2) + (s.twist[1] - c.vy).powi(2)) / w.lin_vel_sigma).exp()
                + w.ang_vel * (-(s.twist[2] - c.wz).powi(2) / w.ang_vel_sigma).exp()
                - w.orientation * (s.tilt[0].powi(2) + s.tilt[1].powi(2));
            for i in 0..4 {
                oracle -= w.action_rate * (a[i] - ap[i]).powi(2);
                oracle -= w.joint_vel * s.qd[i].powi(2);
                let x = cfg.q_max[i] - (s.q[i] - cfg.q_nominal[i]).abs();
                let d = w.barrier_delta;
                let b = if x >= d {
                    (x / d).ln()
                } else {
                    0.5 - 0.5 * ((x - 2.0 * d) / d).powi(2)
                };
                oracle += w.barrier * b;
            }
            let (total, terms) = reward(&cfg, &s, &a, &ap, &c);
            assert!((total - oracle).abs() < 1e-12, "{total} vs {oracle}");
            assert!(terms.values().iter().all(|v| v.is_finite()));
        }
    }
}

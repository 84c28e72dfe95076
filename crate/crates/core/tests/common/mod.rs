#![allow(dead_code)]

use dreamplan_core::env::{EnvConfig, EnvState};

/// Independent one-step integrator written directly from the plant equations.
pub fn oracle_step(cfg: &EnvConfig, s: &EnvState, a: &[f64]) -> EnvState {
    let k = cfg.joints;
    let dt = cfg.dt;
    let mut n = s.clone();
    for i in 0..k {
        let acc = cfg.kp * (a[i] + cfg.q_nominal[i] - s.q[i]) - cfg.kd * s.qd[i];
        n.qd[i] = s.qd[i] + dt * acc;
        n.q[i] = s.q[i] + dt * n.qd[i];
    }
    for r in 0..3 {
        let mut acc = -cfg.twist_damping * s.twist[r];
        let mut bsum = 0.0;
        let mut dsum = 0.0;
        for i in 0..k {
            bsum += cfg.twist_from_offset.get(r, i) * (n.q[i] - cfg.q_nominal[i]);
            dsum += cfg.twist_from_joint_vel.get(r, i) * n.qd[i];
        }
        acc += bsum + dsum;
        n.twist[r] = s.twist[r] + dt * acc;
    }
    for r in 0..2 {
        let mut e = 0.0;
        for i in 0..k {
            e += cfg.tilt_from_joint_vel.get(r, i) * n.qd[i];
        }
        let acc = e - cfg.tilt_stiffness * s.tilt[r] - cfg.tilt_damping * s.tilt_rate[r];
        n.tilt_rate[r] = s.tilt_rate[r] + dt * acc;
        n.tilt[r] = s.tilt[r] + dt * n.tilt_rate[r];
    }
    n.prev_action = a.to_vec();
    n.disturbance = [0.0; 3];
    n.step = s.step + 1;
    n
}

pub fn max_state_diff(a: &EnvState, b: &EnvState) -> f64 {
    let fa: Vec<f64> = flat(a);
    let fb: Vec<f64> = flat(b);
    fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn flat(s: &EnvState) -> Vec<f64> {
    s.q.iter()
        .chain(&s.qd)
        .chain(&s.twist)
        .chain(&s.tilt)
        .chain(&s.tilt_rate)
        .chain(&s.prev_action)
        .copied()
        .collect()
}

//! Planar quadruped surrogate.
//!
//! One control step of length `dt` is a semi-implicit Euler update, joints
//! first, then the base twist and the roll/pitch oscillator driven by the
//! updated joint state:
//!
//! ```text
//! q̈      = kp (a + q_nom − q) − kd q̇          q̇' = q̇ + dt q̈,   q' = q + dt q̇'
//! ν̇      = B (q' − q_nom) + D q̇' − c ν        ν'  = ν + dt ν̇
//! θ̈      = E q̇' − k_o θ − d_o θ̇              θ̇' = θ̇ + dt θ̈,   θ' = θ + dt θ̇'
//! ```
//!
//! with `θ = (roll, pitch)` and projected gravity
//! `g = (−sin p, sin r cos p, −cos r cos p)`.

mod config;
mod reward;

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use config::{EnvConfig, NoiseLevel, NoiseStddevs, RewardWeights};
pub use reward::{relaxed_log_barrier, reward, RewardTerms};

use crate::error::{Error, Result};

/// Index map of the observation vector for `joints` joints:
/// `[q − q_nom (k) | q̇ (k) | gravity (3) | command (3) | previous action (k)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObsLayout {
    pub joints: usize,
}

impl ObsLayout {
    pub fn new(joints: usize) -> Self {
        Self { joints }
    }

    pub fn dim(&self) -> usize {
        3 * self.joints + 6
    }

    pub fn joint_pos(&self) -> std::ops::Range<usize> {
        0..self.joints
    }

    pub fn joint_vel(&self) -> std::ops::Range<usize> {
        self.joints..2 * self.joints
    }

    pub fn gravity(&self) -> std::ops::Range<usize> {
        2 * self.joints..2 * self.joints + 3
    }

    pub fn command(&self) -> std::ops::Range<usize> {
        2 * self.joints + 3..2 * self.joints + 6
    }

    pub fn prev_action(&self) -> std::ops::Range<usize> {
        2 * self.joints + 6..3 * self.joints + 6
    }

    /// Overwrites the command slice of `obs`.
    pub fn set_command(&self, obs: &mut [f64], cmd: &Twist) {
        obs[self.command()].copy_from_slice(&cmd.to_array());
    }

    pub fn command_of(&self, obs: &[f64]) -> Twist {
        let c = &obs[self.command()];
        Twist::new(c[0], c[1], c[2])
    }
}

/// Base twist `(v_x, v_y, ω_z)` in m/s, m/s, rad/s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist {
        vx: 0.0,
        vy: 0.0,
        wz: 0.0,
    };

    pub fn new(vx: f64, vy: f64, wz: f64) -> Self {
        Self { vx, vy, wz }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.vx, self.vy, self.wz]
    }

    pub fn scaled(self, s: f64) -> Self {
        Self::new(self.vx * s, self.vy * s, self.wz * s)
    }

    pub fn max_abs_diff(self, other: Twist) -> f64 {
        (self.vx - other.vx)
            .abs()
            .max((self.vy - other.vy).abs())
            .max((self.wz - other.wz).abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Deref for Observation {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Simulator-only channels: true twist (3), disturbance proxy (3), true
/// roll/pitch rates (2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivilegedObservation(pub Vec<f64>);

impl PrivilegedObservation {
    pub const DIM: usize = 8;
}

impl Deref for PrivilegedObservation {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub twist: [f64; 3],
    /// `(roll, pitch)`
    pub tilt: [f64; 2],
    pub tilt_rate: [f64; 2],
    pub prev_action: Vec<f64>,
    /// Impulse applied since the last step; cleared by the next step.
    pub disturbance: [f64; 3],
    pub step: usize,
}

impl EnvState {
    /// Nominal, level, at rest.
    pub fn nominal(cfg: &EnvConfig) -> Self {
        Self {
            q: cfg.q_nominal.clone(),
            qd: vec![0.0; cfg.joints],
            twist: [0.0; 3],
            tilt: [0.0; 2],
            tilt_rate: [0.0; 2],
            prev_action: vec![0.0; cfg.joints],
            disturbance: [0.0; 3],
            step: 0,
        }
    }

    pub fn joint_offsets(&self, cfg: &EnvConfig) -> Vec<f64> {
        self.q.iter().zip(&cfg.q_nominal).map(|(q, n)| q - n).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.q
            .iter()
            .chain(&self.qd)
            .chain(&self.twist)
            .chain(&self.tilt)
            .chain(&self.tilt_rate)
            .chain(&self.prev_action)
            .all(|v| v.is_finite())
    }
}

pub fn projected_gravity(roll: f64, pitch: f64) -> [f64; 3] {
    [-pitch.sin(), roll.sin() * pitch.cos(), -roll.cos() * pitch.cos()]
}

/// Inverse of [`projected_gravity`] for a (possibly unnormalized) vector.
pub fn tilt_from_gravity(g: &[f64]) -> (f64, f64) {
    let roll = g[1].atan2(-g[2]);
    let pitch = (-g[0]).atan2((g[1] * g[1] + g[2] * g[2]).sqrt());
    (roll, pitch)
}

/// One integration step; no validation, no bookkeeping beyond the state.
pub fn integrate(cfg: &EnvConfig, s: &EnvState, action: &[f64]) -> EnvState {
    let k = cfg.joints;
    let dt = cfg.dt;
    let mut q = s.q.clone();
    let mut qd = s.qd.clone();
    for i in 0..k {
        let qdd = cfg.kp * (action[i] + cfg.q_nominal[i] - s.q[i]) - cfg.kd * s.qd[i];
        qd[i] = s.qd[i] + dt * qdd;
        q[i] = s.q[i] + dt * qd[i];
    }
    let offset: Vec<f64> = q.iter().zip(&cfg.q_nominal).map(|(q, n)| q - n).collect();
    let b_off = cfg.twist_from_offset.mul_vec(&offset);
    let d_vel = cfg.twist_from_joint_vel.mul_vec(&qd);
    let mut twist = s.twist;
    for j in 0..3 {
        let acc = b_off[j] + d_vel[j] - cfg.twist_damping * s.twist[j];
        twist[j] = s.twist[j] + dt * acc;
    }
    let e_vel = cfg.tilt_from_joint_vel.mul_vec(&qd);
    let mut tilt = s.tilt;
    let mut tilt_rate = s.tilt_rate;
    for j in 0..2 {
        let acc = e_vel[j] - cfg.tilt_stiffness * s.tilt[j] - cfg.tilt_damping * s.tilt_rate[j];
        tilt_rate[j] = s.tilt_rate[j] + dt * acc;
        tilt[j] = s.tilt[j] + dt * tilt_rate[j];
    }
    EnvState {
        q,
        qd,
        twist,
        tilt,
        tilt_rate,
        prev_action: action.to_vec(),
        disturbance: [0.0; 3],
        step: s.step + 1,
    }
}

/// Assembles the observation and adds seeded Gaussian noise; the command
/// and previous-action slices are exact.
pub fn observe<R: Rng + ?Sized>(cfg: &EnvConfig, s: &EnvState, cmd: &Twist, noise: &mut R) -> Observation {
    let layout = cfg.layout();
    let sd = cfg.noise.stddevs();
    let mut o = vec![0.0; layout.dim()];
    let mut gauss = |std: f64| -> f64 {
        if std == 0.0 {
            0.0
        } else {
            let z: f64 = StandardNormal.sample(noise);
            std * z
        }
    };
    for i in 0..cfg.joints {
        o[layout.joint_pos().start + i] = s.q[i] - cfg.q_nominal[i] + gauss(sd.joint_pos);
    }
    for i in 0..cfg.joints {
        o[layout.joint_vel().start + i] = s.qd[i] + gauss(sd.joint_vel);
    }
    let g = projected_gravity(s.tilt[0], s.tilt[1]);
    for (j, gj) in g.iter().enumerate() {
        o[layout.gravity().start + j] = gj + gauss(sd.gravity);
    }
    layout.set_command(&mut o, cmd);
    o[layout.prev_action()].copy_from_slice(&s.prev_action);
    Observation(o)
}

pub fn privileged(s: &EnvState) -> PrivilegedObservation {
    let mut p = Vec::with_capacity(PrivilegedObservation::DIM);
    p.extend_from_slice(&s.twist);
    p.extend_from_slice(&s.disturbance);
    p.extend_from_slice(&s.tilt_rate);
    PrivilegedObservation(p)
}

/// Adds `impulse` to the base twist and records it in the disturbance proxy.
pub fn apply_disturbance(s: &EnvState, impulse: [f64; 3]) -> EnvState {
    let mut next = s.clone();
    for j in 0..3 {
        next.twist[j] += impulse[j];
        next.disturbance[j] = impulse[j];
    }
    next
}

/// Initial state `q_nominal + U(−ε, ε)` at rest, plus its observation under a
/// zero command. The returned rng continues the noise stream.
pub fn reset(cfg: &EnvConfig, seed: u64) -> (EnvState, Observation, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = EnvState::nominal(cfg);
    if cfg.reset_perturbation > 0.0 {
        let eps = cfg.reset_perturbation;
        for q in &mut s.q {
            *q += rng.gen_range(-eps..=eps);
        }
    }
    let obs = observe(cfg, &s, &Twist::ZERO, &mut rng);
    (s, obs, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub observation: Observation,
    pub reward: f64,
    pub terms: RewardTerms,
    pub privileged: PrivilegedObservation,
    /// Fell over or hit the episode cap.
    pub done: bool,
    /// `done` because of the episode cap only.
    pub timeout: bool,
}

pub fn step<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    s: &EnvState,
    action: &[f64],
    cmd: &Twist,
    noise: &mut R,
) -> Result<Transition> {
    if action.len() != cfg.joints {
        return Err(Error::shape("action", cfg.joints, action.len()));
    }
    if let Some(i) = action.iter().position(|a| !a.is_finite()) {
        return Err(Error::NonFinite(format!("action component {i}")));
    }
    let bound = cfg.action_bound * (1.0 + 1e-12);
    if action.iter().any(|a| a.abs() > bound) {
        return Err(Error::InvalidConfig(format!(
            "action exceeds bound {}",
            cfg.action_bound
        )));
    }
    let next = integrate(cfg, s, action);
    let (total, terms) = reward(cfg, &next, action, &s.prev_action, cmd);
    let fell = next.tilt[0].abs() > cfg.fall_threshold || next.tilt[1].abs() > cfg.fall_threshold;
    let timeout = !fell && next.step >= cfg.episode_cap;
    let observation = observe(cfg, &next, cmd, noise);
    let privileged = privileged(&next);
    Ok(Transition {
        state: next,
        observation,
        reward: total,
        terms,
        privileged,
        done: fell || timeout,
        timeout,
    })
}

/// Clamps each action component to the configured bound.
pub fn clamp_action(cfg: &EnvConfig, action: &mut [f64]) {
    let b = cfg.action_bound;
    action.iter_mut().for_each(|a| *a = a.clamp(-b, b));
}

/// Stateful wrapper owning a state and its noise stream.
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    state: EnvState,
    noise: ChaCha8Rng,
}

impl Env {
    pub fn new(config: EnvConfig, seed: u64) -> Result<(Self, Observation)> {
        config.validate()?;
        let (state, obs, noise) = reset(&config, seed);
        Ok((Self { config, state, noise }, obs))
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        let (state, obs, noise) = reset(&self.config, seed);
        self.state = state;
        self.noise = noise;
        obs
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn privileged(&self) -> PrivilegedObservation {
        privileged(&self.state)
    }

    pub fn observe(&mut self, cmd: &Twist) -> Observation {
        observe(&self.config, &self.state, cmd, &mut self.noise)
    }

    pub fn step(&mut self, action: &[f64], cmd: &Twist) -> Result<Transition> {
        let t = step(&self.config, &self.state, action, cmd, &mut self.noise)?;
        self.state = t.state.clone();
        Ok(t)
    }

    pub fn apply_disturbance(&mut self, impulse: [f64; 3]) {
        self.state = apply_disturbance(&self.state, impulse);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(k: usize) -> EnvConfig {
        let mut cfg = EnvConfig::new(k, 1);
        cfg.noise = NoiseLevel::None;
        cfg
    }

    #[test]
    fn reset_is_deterministic_and_layout_holds() {
        let cfg = EnvConfig::new(4, 2);
        let (a, oa, _) = reset(&cfg, 17);
        let (b, ob, _) = reset(&cfg, 17);
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        let mut cfg0 = quiet(4);
        cfg0.reset_perturbation = 0.0;
        let (s, o, _) = reset(&cfg0, 5);
        assert_eq!(s.q, cfg0.q_nominal);
        assert_eq!(&o[..4], &[0.0; 4]);
        let cfg = quiet(4);
        let (s, o, _) = reset(&cfg, 8);
        assert_eq!(&o[..4], s.joint_offsets(&cfg).as_slice());
    }

    #[test]
    fn nominal_state_is_a_fixed_point() {
        let cfg = quiet(4);
        let s = EnvState::nominal(&cfg);
        let t = step(&cfg, &s, &[0.0; 4], &Twist::ZERO, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut expected = s.clone();
        expected.step = 1;
        assert_eq!(t.state, expected);
        assert!(!t.done);
    }

    #[test]
    fn layout_slices_tile_the_observation() {
        for k in [2, 4, 12] {
            let l = ObsLayout::new(k);
            assert_eq!(l.joint_pos().end, l.joint_vel().start);
            assert_eq!(l.joint_vel().end, l.gravity().start);
            assert_eq!(l.gravity().end, l.command().start);
            assert_eq!(l.command().end, l.prev_action().start);
            assert_eq!(l.prev_action().end, l.dim());
        }
    }

    #[test]
    fn gravity_inverse_round_trips() {
        let (r, p) = tilt_from_gravity(&projected_gravity(0.3, -0.2));
        assert!((r - 0.3).abs() < 1e-12 && (p + 0.2).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_actions() {
        let cfg = quiet(4);
        let s = EnvState::nominal(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(step(&cfg, &s, &[f64::NAN, 0.0, 0.0, 0.0], &Twist::ZERO, &mut rng).is_err());
        assert!(step(&cfg, &s, &[2.0, 0.0, 0.0, 0.0], &Twist::ZERO, &mut rng).is_err());
        assert!(step(&cfg, &s, &[0.0; 3], &Twist::ZERO, &mut rng).is_err());
    }

    #[test]
    fn fall_and_cap_terminate() {
        let cfg = quiet(4);
        let mut s = EnvState::nominal(&cfg);
        s.tilt[0] = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = step(&cfg, &s, &[0.0; 4], &Twist::ZERO, &mut rng).unwrap();
        assert!(t.done && !t.timeout);
        let mut s = EnvState::nominal(&cfg);
        s.step = cfg.episode_cap - 1;
        let t = step(&cfg, &s, &[0.0; 4], &Twist::ZERO, &mut rng).unwrap();
        assert!(t.done && t.timeout);
    }

    #[test]
    fn disturbance_is_reported_for_one_step() {
        let cfg = quiet(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = EnvState::nominal(&cfg);
        assert_eq!(apply_disturbance(&s, [0.0; 3]), s);
        let pushed = apply_disturbance(&s, [0.3, -0.1, 0.2]);
        assert_eq!(&privileged(&pushed)[3..6], &[0.3, -0.1, 0.2]);
        let t = step(&cfg, &pushed, &[0.0; 4], &Twist::ZERO, &mut rng).unwrap();
        assert_eq!(&t.privileged[3..6], &[0.0; 3]);
    }
}

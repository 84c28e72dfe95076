use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensornet::Matrix;

/// Observation-noise setting. Joint-angle stddevs are 0 / 0.005 / 0.01 / 0.05 rad;
/// other channels scale proportionally (see [`NoiseLevel::stddevs`]).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    None,
    #[default]
    Low,
    Medium,
    High,
}

/// Per-channel observation noise stddevs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseStddevs {
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub gravity: f64,
}

impl NoiseLevel {
    pub const JOINT_VEL_SCALE: f64 = 10.0;
    pub const GRAVITY_SCALE: f64 = 1.0;

    pub fn joint_stddev(self) -> f64 {
        match self {
            NoiseLevel::None => 0.0,
            NoiseLevel::Low => 0.005,
            NoiseLevel::Medium => 0.01,
            NoiseLevel::High => 0.05,
        }
    }

    /// Command and previous-action channels are always exact.
    pub fn stddevs(self) -> NoiseStddevs {
        let s = self.joint_stddev();
        NoiseStddevs {
            joint_pos: s,
            joint_vel: s * Self::JOINT_VEL_SCALE,
            gravity: s * Self::GRAVITY_SCALE,
        }
    }

    pub fn all() -> [NoiseLevel; 3] {
        [NoiseLevel::Low, NoiseLevel::Medium, NoiseLevel::High]
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseLevel::None => "none",
            NoiseLevel::Low => "low",
            NoiseLevel::Medium => "medium",
            NoiseLevel::High => "high",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lin_vel: f64,
    pub ang_vel: f64,
    pub orientation: f64,
    pub action_rate: f64,
    pub joint_vel: f64,
    pub barrier: f64,
    pub lin_vel_sigma: f64,
    pub ang_vel_sigma: f64,
    /// Width of the quadratic extension of the joint-limit log barrier (rad).
    pub barrier_delta: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lin_vel: 1.5,
            ang_vel: 0.75,
            orientation: 1.0,
            action_rate: 0.01,
            joint_vel: 0.001,
            barrier: 0.02,
            lin_vel_sigma: 0.25,
            ang_vel_sigma: 0.25,
            barrier_delta: 0.05,
        }
    }
}

/// Surrogate plant parameters. Joint limits `q_max` bound the offset
/// `|q - q_nominal|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub joints: usize,
    pub dt: f64,
    pub q_nominal: Vec<f64>,
    pub q_max: Vec<f64>,
    pub kp: f64,
    pub kd: f64,
    pub twist_damping: f64,
    /// `B`: joint offset → twist acceleration, `[3 × joints]`.
    pub twist_from_offset: Matrix,
    /// `D`: joint velocity → twist acceleration, `[3 × joints]`.
    pub twist_from_joint_vel: Matrix,
    /// `E`: joint velocity → roll/pitch acceleration, `[2 × joints]`.
    pub tilt_from_joint_vel: Matrix,
    pub tilt_stiffness: f64,
    pub tilt_damping: f64,
    pub noise: NoiseLevel,
    pub command_low: [f64; 3],
    pub command_high: [f64; 3],
    pub action_bound: f64,
    pub fall_threshold: f64,
    pub episode_cap: usize,
    pub reset_perturbation: f64,
    pub reward: RewardWeights,
    pub coupling_seed: u64,
}

const NOMINAL_PATTERN: [f64; 3] = [0.1, 0.8, -1.5];

impl EnvConfig {
    /// Default surrogate with `joints` actuated joints and coupling matrices
    /// drawn from `coupling_seed`.
    pub fn new(joints: usize, coupling_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(coupling_seed);
        let mut draw = |rows: usize, scale: f64| {
            let data = (0..rows * joints)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect();
            Matrix::from_vec(rows, joints, data).expect("sized by construction")
        };
        let twist_from_offset = draw(3, 4.0);
        let twist_from_joint_vel = draw(3, 0.2);
        let tilt_from_joint_vel = draw(2, 1.0);
        Self {
            joints,
            dt: 0.02,
            q_nominal: (0..joints).map(|i| NOMINAL_PATTERN[i % 3]).collect(),
            q_max: vec![0.45; joints],
            kp: 100.0,
            kd: 20.0,
            twist_damping: 2.0,
            twist_from_offset,
            twist_from_joint_vel,
            tilt_from_joint_vel,
            tilt_stiffness: 25.0,
            tilt_damping: 6.0,
            noise: NoiseLevel::Low,
            command_low: [-1.0, -0.6, -1.0],
            command_high: [1.0, 0.6, 1.0],
            action_bound: 1.0,
            fall_threshold: 0.8,
            episode_cap: 400,
            reset_perturbation: 0.05,
            reward: RewardWeights::default(),
            coupling_seed,
        }
    }

    pub fn obs_dim(&self) -> usize {
        3 * self.joints + 6
    }

    pub fn layout(&self) -> super::ObsLayout {
        super::ObsLayout::new(self.joints)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.joints;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if k == 0 {
            return bad("joint count must be positive".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.q_nominal.len() != k || self.q_max.len() != k {
            return bad("q_nominal and q_max must have one entry per joint".into());
        }
        if self.q_max.iter().any(|&q| !(q > 0.0)) {
            return bad("q_max must be positive".into());
        }
        for (name, g) in [
            ("kp", self.kp),
            ("kd", self.kd),
            ("twist_damping", self.twist_damping),
            ("tilt_stiffness", self.tilt_stiffness),
            ("tilt_damping", self.tilt_damping),
            ("action_bound", self.action_bound),
            ("fall_threshold", self.fall_threshold),
        ] {
            if !(g > 0.0) {
                return bad(format!("{name} must be positive, got {g}"));
            }
        }
        for (name, m, rows) in [
            ("twist_from_offset", &self.twist_from_offset, 3),
            ("twist_from_joint_vel", &self.twist_from_joint_vel, 3),
            ("tilt_from_joint_vel", &self.tilt_from_joint_vel, 2),
        ] {
            if m.rows() != rows || m.cols() != k {
                return bad(format!("{name} must be {rows}x{k}"));
            }
        }
        if self.command_low.iter().zip(&self.command_high).any(|(l, h)| l > h) {
            return bad("command_low exceeds command_high".into());
        }
        if self.reset_perturbation < 0.0 || self.reward.barrier_delta <= 0.0 {
            return bad("perturbation must be nonnegative and barrier delta positive".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

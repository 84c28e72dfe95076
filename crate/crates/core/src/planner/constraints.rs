use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, ObsLayout};
use crate::error::{Error, Result};
use crate::tensornet::Real;

/// Everything a per-step constraint may look at.
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    pub observation: &'a [f64],
    pub action: &'a [f64],
    pub command: &'a [f64; 3],
    pub target: &'a [f64; 3],
}

pub type ConstraintFn = Arc<dyn Fn(&StepInput) -> f64 + Send + Sync>;

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `Σ_i max(0, |q_i − q_nom,i| − limit_i)`.
    JointOvershoot { limits: Vec<f64> },
    /// `max(0, |roll| − roll_max) + max(0, |pitch| − pitch_max)`, tilt read
    /// back from projected gravity.
    OrientationOvershoot { roll_max: f64, pitch_max: f64 },
    /// `max_i (|ν_i − ν_tgt,i| − δ_i)`, nonpositive inside the sampling box.
    CommandDeviation { delta: [f64; 3] },
    #[serde(skip)]
    Custom(ConstraintFn),
}

impl fmt::Debug for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::JointOvershoot { limits } => f.debug_struct("JointOvershoot").field("limits", limits).finish(),
            Self::OrientationOvershoot { roll_max, pitch_max } => f
                .debug_struct("OrientationOvershoot")
                .field("roll_max", roll_max)
                .field("pitch_max", pitch_max)
                .finish(),
            Self::CommandDeviation { delta } => f.debug_struct("CommandDeviation").field("delta", delta).finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl PartialEq for ConstraintKind {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::JointOvershoot { limits: a }, Self::JointOvershoot { limits: b }) => a == b,
            (
                Self::OrientationOvershoot {
                    roll_max: a,
                    pitch_max: b,
                },
                Self::OrientationOvershoot {
                    roll_max: c,
                    pitch_max: d,
                },
            ) => a == c && b == d,
            (Self::CommandDeviation { delta: a }, Self::CommandDeviation { delta: b }) => a == b,
            (Self::Custom(a), Self::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

/// One constraint channel: the discounted sum of its per-step values over
/// the horizon must stay at or below `bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    #[serde(flatten)]
    pub kind: ConstraintKind,
    pub bound: f64,
}

impl Constraint {
    pub fn joint_overshoot(limits: Vec<f64>, bound: f64) -> Self {
        Self {
            name: "joint_overshoot".into(),
            kind: ConstraintKind::JointOvershoot { limits },
            bound,
        }
    }

    pub fn orientation_overshoot(roll_max: f64, pitch_max: f64, bound: f64) -> Self {
        Self {
            name: "orientation_overshoot".into(),
            kind: ConstraintKind::OrientationOvershoot { roll_max, pitch_max },
            bound,
        }
    }

    pub fn command_deviation(delta: [f64; 3], bound: f64) -> Self {
        Self {
            name: "command_deviation".into(),
            kind: ConstraintKind::CommandDeviation { delta },
            bound,
        }
    }

    pub fn custom(name: impl Into<String>, f: ConstraintFn, bound: f64) -> Self {
        Self {
            name: name.into(),
            kind: ConstraintKind::Custom(f),
            bound,
        }
    }

    pub fn validate(&self, layout: ObsLayout) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("constraint {}: {msg}", self.name)));
        if !self.bound.is_finite() {
            return bad("bound must be finite");
        }
        match &self.kind {
            ConstraintKind::JointOvershoot { limits } => {
                if limits.len() != layout.joints {
                    return Err(Error::shape(
                        format!("constraint {} limits", self.name),
                        layout.joints,
                        limits.len(),
                    ));
                }
                if limits.iter().any(|l| !(*l >= 0.0)) {
                    return bad("limits must be nonnegative");
                }
            }
            ConstraintKind::OrientationOvershoot { roll_max, pitch_max } => {
                if !(*roll_max > 0.0 && *roll_max < std::f64::consts::FRAC_PI_2)
                    || !(*pitch_max > 0.0 && *pitch_max < std::f64::consts::FRAC_PI_2)
                {
                    return bad("tilt limits must lie in (0, π/2)");
                }
            }
            ConstraintKind::CommandDeviation { delta } => {
                if delta.iter().any(|d| !(*d >= 0.0)) {
                    return bad("deviation bounds must be nonnegative");
                }
            }
            ConstraintKind::Custom(_) => {}
        }
        Ok(())
    }

    /// Per-step value for one sample.
    pub fn step_value(&self, layout: ObsLayout, input: &StepInput) -> f64 {
        match &self.kind {
            ConstraintKind::JointOvershoot { limits } => {
                let q = &input.observation[layout.joint_pos()];
                let mut acc = 0.0;
                for (x, l) in q.iter().zip(limits) {
                    acc += overshoot(*x, *l);
                }
                acc
            }
            ConstraintKind::OrientationOvershoot { roll_max, pitch_max } => {
                let g = &input.observation[layout.gravity()];
                let lim = TiltLimits::new(*roll_max, *pitch_max);
                lim.excess(g[0], g[1], g[2])
            }
            ConstraintKind::CommandDeviation { delta } => command_excess(input.command, input.target, delta),
            ConstraintKind::Custom(f) => f(input),
        }
    }

    /// Per-step values for `out.len()` lanes of a feature-major batch whose
    /// first rows hold the observation and whose rows from `action_row` hold
    /// the action. Matches [`Constraint::step_value`] bit for bit on `f64`.
    pub(crate) fn step_values<T: Real>(
        &self,
        layout: ObsLayout,
        x: &[T],
        lanes: usize,
        action_row: usize,
        commands: &[[f64; 3]],
        target: &[f64; 3],
        out: &mut [f64],
    ) {
        let n = out.len();
        let row = |f: usize| &x[f * lanes..f * lanes + n];
        match &self.kind {
            ConstraintKind::JointOvershoot { limits } => {
                out.fill(0.0);
                for (i, l) in layout.joint_pos().zip(limits) {
                    for (o, q) in out.iter_mut().zip(row(i)) {
                        *o += overshoot(q.to_f64(), *l);
                    }
                }
            }
            ConstraintKind::OrientationOvershoot { roll_max, pitch_max } => {
                let g = layout.gravity().start;
                let (g0, g1, g2) = (row(g), row(g + 1), row(g + 2));
                let lim = TiltLimits::new(*roll_max, *pitch_max);
                for j in 0..n {
                    out[j] = lim.excess(g0[j].to_f64(), g1[j].to_f64(), g2[j].to_f64());
                }
            }
            ConstraintKind::CommandDeviation { delta } => {
                for (o, c) in out.iter_mut().zip(commands) {
                    *o = command_excess(c, target, delta);
                }
            }
            ConstraintKind::Custom(f) => {
                let p = layout.dim();
                let k = layout.joints;
                let mut obs = vec![0.0; p];
                let mut act = vec![0.0; k];
                for j in 0..n {
                    for (i, v) in obs.iter_mut().enumerate() {
                        *v = x[i * lanes + j].to_f64();
                    }
                    for (i, v) in act.iter_mut().enumerate() {
                        *v = x[(action_row + i) * lanes + j].to_f64();
                    }
                    out[j] = f(&StepInput {
                        observation: &obs,
                        action: &act,
                        command: &commands[j],
                        target,
                    });
                }
            }
        }
    }
}

/// Joint, orientation and command-deviation channels with zero bounds: no
/// predicted overshoot anywhere on the horizon, command inside the box.
pub fn default_constraints(env: &EnvConfig, tilt_max: f64, command_delta: [f64; 3]) -> Vec<Constraint> {
    vec![
        Constraint::joint_overshoot(env.q_max.clone(), 0.0),
        Constraint::orientation_overshoot(tilt_max, tilt_max, 0.0),
        Constraint::command_deviation(command_delta, 0.0),
    ]
}

#[inline]
fn overshoot(x: f64, limit: f64) -> f64 {
    (x.abs() - limit).max(0.0)
}

struct TiltLimits {
    roll: f64,
    pitch: f64,
    tan_roll: f64,
    tan_pitch: f64,
}

impl TiltLimits {
    fn new(roll: f64, pitch: f64) -> Self {
        Self {
            roll,
            pitch,
            tan_roll: roll.tan(),
            tan_pitch: pitch.tan(),
        }
    }

    /// Tilt overshoot. The tangent test skips the arctangents for the
    /// common in-bounds case; at the boundary both branches agree up to
    /// rounding.
    #[inline]
    fn excess(&self, g0: f64, g1: f64, g2: f64) -> f64 {
        let down = -g2;
        let mut e = 0.0;
        if !(g1.abs() <= self.tan_roll * down) {
            e += (g1.atan2(down).abs() - self.roll).max(0.0);
        }
        let lateral = (g1 * g1 + g2 * g2).sqrt();
        if !(g0.abs() <= self.tan_pitch * lateral) {
            e += ((-g0).atan2(lateral).abs() - self.pitch).max(0.0);
        }
        e
    }
}

#[inline]
fn command_excess(cmd: &[f64; 3], target: &[f64; 3], delta: &[f64; 3]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for i in 0..3 {
        m = m.max((cmd[i] - target[i]).abs() - delta[i]);
    }
    m
}

//! Target command schedules for evaluation episodes.

use dreamplan_core::env::{EnvConfig, Twist};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Multiple of the training command range used by the extreme profile.
pub const EXTREME_SCALE: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// First control step of the segment.
    pub start: usize,
    pub twist: Twist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommandProfile {
    Constant {
        twist: Twist,
    },
    /// Segments sorted by `start`, the first starting at step 0.
    Piecewise {
        segments: Vec<Segment>,
    },
}

/// A profile given by name or spelled out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Named(ProfileName),
    Explicit(CommandProfile),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Benign,
    Extreme,
}

impl ProfileSpec {
    pub fn resolve(&self, env: &EnvConfig) -> Result<CommandProfile> {
        let p = match self {
            ProfileSpec::Named(ProfileName::Benign) => CommandProfile::benign(env),
            ProfileSpec::Named(ProfileName::Extreme) => CommandProfile::extreme(env),
            ProfileSpec::Explicit(p) => p.clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

impl CommandProfile {
    /// Piecewise schedule inside the training range: forward, sideways,
    /// turning, then stop.
    pub fn benign(env: &EnvConfig) -> Self {
        let h = env.command_high;
        let l = env.command_low;
        let seg = |start, vx, vy, wz| Segment {
            start,
            twist: Twist::new(vx, vy, wz),
        };
        CommandProfile::Piecewise {
            segments: vec![
                seg(0, 0.5 * h[0], 0.0, 0.0),
                seg(100, 0.3 * h[0], 0.5 * h[1], 0.0),
                seg(200, 0.0, 0.5 * l[1], 0.5 * h[2]),
                seg(300, 0.0, 0.0, 0.0),
            ],
        }
    }

    /// Constant target at `EXTREME_SCALE` times the upper corner of the
    /// training range.
    pub fn extreme(env: &EnvConfig) -> Self {
        CommandProfile::Constant {
            twist: Twist::from_array(env.command_high).scaled(EXTREME_SCALE),
        }
    }

    pub fn at(&self, step: usize) -> Twist {
        match self {
            CommandProfile::Constant { twist } => *twist,
            CommandProfile::Piecewise { segments } => {
                let i = segments.partition_point(|s| s.start <= step);
                segments[i.saturating_sub(1)].twist
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |t: &Twist| t.to_array().iter().all(|v| v.is_finite());
        match self {
            CommandProfile::Constant { twist } if !finite(twist) => {
                Err(HarnessError::Config("profile twist must be finite".into()))
            }
            CommandProfile::Constant { .. } => Ok(()),
            CommandProfile::Piecewise { segments } => {
                if segments.first().map(|s| s.start) != Some(0) {
                    return Err(HarnessError::Config("piecewise profile must start at step 0".into()));
                }
                if segments.windows(2).any(|w| w[1].start <= w[0].start) {
                    return Err(HarnessError::Config("piecewise segment starts must increase".into()));
                }
                if !segments.iter().all(|s| finite(&s.twist)) {
                    return Err(HarnessError::Config("profile twist must be finite".into()));
                }
                Ok(())
            }
        }
    }
}

//! Analytic environments with ground-truth model access.

mod lottery;
mod lq;
mod pendulum;
mod pointmass;
mod trace;

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ActionVec, GaussianDynamics, RewardModel, StateVec};
use crate::error::{Error, Result};

pub use lottery::{
    reaching_episodes, LotteryDynamics, LotteryEnv, LotteryReward, BOTTOM_GOAL, LOTTERY_ACTION_BOUND, LOTTERY_WIN_PROB,
    TOP_GOAL,
};
pub use lq::LqEnv;
pub use pendulum::{wrap_angle, PendulumDynamics, PendulumEnv, PendulumReward};
pub use pointmass::{PointMassDynamics, PointMassEnv};
pub use trace::{read_trace_csv, write_trace_csv};

/// Standard deviation reported by oracle models for deterministic transitions.
pub const ORACLE_STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: StateVec,
    pub reward: f64,
    /// Terminated (goal reached) or hit the episode length.
    pub done: bool,
}

/// Reset/step environment with access to its own ground-truth model.
pub trait Env: Send {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Per-coordinate action bound `a_m`.
    fn action_bound(&self) -> f64;
    fn episode_length(&self) -> usize;

    fn reset(&mut self, seed: u64) -> StateVec;
    fn state(&self) -> StateVec;
    /// Applies the action clamped to `[-a_m, a_m]`.
    fn step(&mut self, action: &ActionVec) -> Result<StepResult>;

    fn oracle_dynamics(&self) -> Arc<dyn GaussianDynamics>;
    /// State part of the reward; see [`Env::action_cost`].
    fn oracle_reward(&self) -> Arc<dyn RewardModel>;
    /// Weight `c` of the `-c‖a‖²` term in the per-step reward.
    fn action_cost(&self) -> f64 {
        0.0
    }
    /// Dense tasks get reward normalization in the training loop.
    fn dense_reward(&self) -> bool;
    /// Whether the current episode reached its goal.
    fn succeeded(&self) -> bool;
}

pub fn clamp_action(a: &ActionVec, bound: f64) -> ActionVec {
    a.map(|v| v.clamp(-bound, bound))
}

pub(crate) fn check_action(a: &ActionVec, dim: usize) -> Result<()> {
    if a.len() != dim {
        return Err(Error::Dimension {
            context: "action",
            expected: dim,
            actual: a.len(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("action"));
    }
    Ok(())
}

/// Environment selection as it appears in config files.
///
/// Either a bare name (`"lottery"`) or an object with a `name` field and
/// environment parameters (`{"name": "pointmass", "d": 0.4}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawDescriptor")]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum EnvDescriptor {
    Lottery(LotteryParams),
    Pointmass(PointMassParams),
    Pendulum(PendulumParams),
    Lq(LqParams),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawDescriptor {
    Name(BareName),
    Full(TaggedDescriptor),
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum BareName {
    Lottery,
    Pointmass,
    Pendulum,
    Lq,
}

#[derive(Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
enum TaggedDescriptor {
    Lottery(LotteryParams),
    Pointmass(PointMassParams),
    Pendulum(PendulumParams),
    Lq(LqParams),
}

impl From<RawDescriptor> for EnvDescriptor {
    fn from(raw: RawDescriptor) -> Self {
        match raw {
            RawDescriptor::Name(BareName::Lottery) => EnvDescriptor::Lottery(LotteryParams::default()),
            RawDescriptor::Name(BareName::Pointmass) => EnvDescriptor::Pointmass(PointMassParams::default()),
            RawDescriptor::Name(BareName::Pendulum) => EnvDescriptor::Pendulum(PendulumParams::default()),
            RawDescriptor::Name(BareName::Lq) => EnvDescriptor::Lq(LqParams::default()),
            RawDescriptor::Full(TaggedDescriptor::Lottery(p)) => EnvDescriptor::Lottery(p),
            RawDescriptor::Full(TaggedDescriptor::Pointmass(p)) => EnvDescriptor::Pointmass(p),
            RawDescriptor::Full(TaggedDescriptor::Pendulum(p)) => EnvDescriptor::Pendulum(p),
            RawDescriptor::Full(TaggedDescriptor::Lq(p)) => EnvDescriptor::Lq(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LotteryParams {
    pub episode_length: usize,
}

impl Default for LotteryParams {
    fn default() -> Self {
        Self { episode_length: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointMassParams {
    /// Goal distance from the start.
    pub d: f64,
    pub sparse: bool,
    pub noise_std: f64,
    pub episode_length: usize,
    /// Width of the smooth goal bump used by the oracle reward on sparse tasks.
    pub reward_width: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            d: 1.0,
            sparse: true,
            noise_std: 0.0,
            episode_length: 100,
            reward_width: pointmass::DEFAULT_REWARD_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub episode_length: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { episode_length: 200 }
    }
}

/// Scalar linear-quadratic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqParams {
    pub z0: f64,
    pub episode_length: usize,
    pub action_bound: f64,
    pub action_cost: f64,
}

impl Default for LqParams {
    fn default() -> Self {
        Self {
            z0: 0.3,
            episode_length: 10,
            action_bound: 1.0,
            action_cost: 0.01,
        }
    }
}

impl EnvDescriptor {
    pub fn name(&self) -> &'static str {
        match self {
            EnvDescriptor::Lottery(_) => "lottery",
            EnvDescriptor::Pointmass(_) => "pointmass",
            EnvDescriptor::Pendulum(_) => "pendulum",
            EnvDescriptor::Lq(_) => "lq",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive_len = |n: usize| {
            if n == 0 {
                Err(Error::config("env.episode_length", "must be positive"))
            } else {
                Ok(())
            }
        };
        match self {
            EnvDescriptor::Lottery(p) => positive_len(p.episode_length),
            EnvDescriptor::Pendulum(p) => positive_len(p.episode_length),
            EnvDescriptor::Lq(p) => {
                positive_len(p.episode_length)?;
                if !p.z0.is_finite() {
                    return Err(Error::config("env.z0", "must be finite"));
                }
                if !(p.action_bound > 0.0 && p.action_bound.is_finite()) {
                    return Err(Error::config("env.action_bound", "must be positive"));
                }
                if !(p.action_cost > 0.0 && p.action_cost.is_finite()) {
                    return Err(Error::config("env.action_cost", "must be positive"));
                }
                Ok(())
            }
            EnvDescriptor::Pointmass(p) => {
                positive_len(p.episode_length)?;
                if !(p.d > 0.0 && p.d.is_finite()) {
                    return Err(Error::config("env.d", format!("goal distance must be positive, got {}", p.d)));
                }
                if !(p.noise_std >= 0.0 && p.noise_std.is_finite()) {
                    return Err(Error::config("env.noise_std", "must be nonnegative"));
                }
                if !(p.reward_width > 0.0 && p.reward_width.is_finite()) {
                    return Err(Error::config("env.reward_width", "must be positive"));
                }
                Ok(())
            }
        }
    }
}

pub fn make_env(desc: &EnvDescriptor) -> Result<Box<dyn Env>> {
    desc.validate()?;
    Ok(match desc {
        EnvDescriptor::Lottery(p) => Box::new(LotteryEnv::new(p.episode_length)),
        EnvDescriptor::Pointmass(p) => Box::new(PointMassEnv::new(p.clone())),
        EnvDescriptor::Pendulum(p) => Box::new(PendulumEnv::new(p.episode_length)),
        EnvDescriptor::Lq(p) => Box::new(LqEnv::new(p.clone())),
    })
}

fn vec2(x: f64, y: f64) -> DVector<f64> {
    DVector::from_vec(vec![x, y])
}

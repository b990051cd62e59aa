//! Gaussian transition and reward model contracts, a small learned
//! implementation, rollouts and likelihood training.
//!
//! States and actions are plain `DVector<f64>`; every model declares its state
//! and action dimension and rejects inputs that do not match.

mod checkpoint;
mod linear;
mod mlp;
mod replay;
mod reward;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use linear::LinearGaussianDynamics;
pub use mlp::{Dense, MlpGaussianDynamics, MlpReward, HIDDEN_UNITS, LOG_STD_MAX, LOG_STD_MIN};
pub use replay::{Episode, ReplayBuffer, Transition};
pub use reward::{ConstantReward, GaussianBumpReward, LinearReward, QuadraticReward};
pub use train::{train_dynamics, train_reward, Adam, ModelTrainer, TrainStats};

pub type StateVec = DVector<f64>;
pub type ActionVec = DVector<f64>;

/// Mean and diagonal standard deviation of `p(z' | z, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: StateVec,
    pub std: StateVec,
}

/// First-order expansion of a transition model around `(z, a)`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub mean: StateVec,
    pub std: StateVec,
    /// `∂mean/∂z`, `D_z × D_z`.
    pub mean_z: DMatrix<f64>,
    /// `∂mean/∂a`, `D_z × D_a`.
    pub mean_a: DMatrix<f64>,
    pub std_z: DMatrix<f64>,
    pub std_a: DMatrix<f64>,
}

/// Conditional diagonal Gaussian `p(z_{t+1} | z_t, a_t)`.
///
/// Implementations must be pure: the same inputs always give the same
/// prediction, which lets planners share one model across restarts.
pub trait GaussianDynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    fn predict(&self, z: &StateVec, a: &ActionVec) -> Result<Prediction>;

    fn linearize(&self, z: &StateVec, a: &ActionVec) -> Result<Linearization>;

    fn mean(&self, z: &StateVec, a: &ActionVec) -> Result<StateVec> {
        Ok(self.predict(z, a)?.mean)
    }

    fn std(&self, z: &StateVec, a: &ActionVec) -> Result<StateVec> {
        Ok(self.predict(z, a)?.std)
    }

    /// `(∂mean/∂z, ∂mean/∂a)`.
    fn jacobians(&self, z: &StateVec, a: &ActionVec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let lin = self.linearize(z, a)?;
        Ok((lin.mean_z, lin.mean_a))
    }

    fn sample(&self, z: &StateVec, a: &ActionVec, rng: &mut dyn RngCore) -> Result<StateVec> {
        let p = self.predict(z, a)?;
        let noise = DVector::from_fn(p.mean.len(), |_, _| StandardNormal.sample(rng));
        Ok(p.mean + p.std.component_mul(&noise))
    }
}

/// Reward predictor `r(z)` with its gradient.
pub trait RewardModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn reward(&self, z: &StateVec) -> f64;

    fn gradient(&self, z: &StateVec) -> StateVec;

    /// Exact Hessian when the model can provide one cheaply.
    fn hessian(&self, _z: &StateVec) -> Option<DMatrix<f64>> {
        None
    }
}

pub(crate) fn check_dims(
    z: &StateVec,
    a: &ActionVec,
    state_dim: usize,
    action_dim: usize,
) -> Result<()> {
    if z.len() != state_dim {
        return Err(Error::Dimension {
            context: "state",
            expected: state_dim,
            actual: z.len(),
        });
    }
    if a.len() != action_dim {
        return Err(Error::Dimension {
            context: "action",
            expected: action_dim,
            actual: a.len(),
        });
    }
    Ok(())
}

/// Mean and standard deviation of the next state.
pub fn predict(model: &dyn GaussianDynamics, z: &StateVec, a: &ActionVec) -> Result<Prediction> {
    model.predict(z, a)
}

/// Unrolls the model mean: `out[0] = z1`, `out[t+1] = mean(out[t], actions[t])`.
pub fn rollout_mean(
    model: &dyn GaussianDynamics,
    z1: &StateVec,
    actions: &[ActionVec],
) -> Result<Vec<StateVec>> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(z1.clone());
    for a in actions {
        let next = model.mean(states.last().unwrap(), a)?;
        states.push(next);
    }
    Ok(states)
}

/// Unrolls sampled transitions. Deterministic for a given rng state.
pub fn rollout_sample(
    model: &dyn GaussianDynamics,
    z1: &StateVec,
    actions: &[ActionVec],
    rng: &mut dyn RngCore,
) -> Result<Vec<StateVec>> {
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(z1.clone());
    for a in actions {
        let next = model.sample(states.last().unwrap(), a, rng)?;
        states.push(next);
    }
    Ok(states)
}

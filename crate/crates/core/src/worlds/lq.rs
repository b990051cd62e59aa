use std::sync::Arc;

use nalgebra::DVector;

use super::{check_action, Env, LqParams, StepResult, ORACLE_STD_FLOOR};
use crate::dynamics::{ActionVec, GaussianDynamics, LinearGaussianDynamics, QuadraticReward, RewardModel, StateVec};
use crate::error::{Error, Result};

/// Scalar integrator `z' = z + a` with reward `-z² - c·a²`.
///
/// Without active bounds the optimal plan is the finite-horizon LQR solution,
/// which makes this the reference task for comparing planners.
#[derive(Debug, Clone)]
pub struct LqEnv {
    params: LqParams,
    z: f64,
    steps: usize,
    done: bool,
}

impl LqEnv {
    pub fn new(params: LqParams) -> Self {
        let z = params.z0;
        Self {
            params,
            z,
            steps: 0,
            done: false,
        }
    }
}

impl Env for LqEnv {
    fn name(&self) -> &'static str {
        "lq"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> f64 {
        self.params.action_bound
    }

    fn episode_length(&self) -> usize {
        self.params.episode_length
    }

    /// Always starts at `z0`; the seed is unused.
    fn reset(&mut self, _seed: u64) -> StateVec {
        self.z = self.params.z0;
        self.steps = 0;
        self.done = false;
        self.state()
    }

    fn state(&self) -> StateVec {
        DVector::from_element(1, self.z)
    }

    fn step(&mut self, action: &ActionVec) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        check_action(action, 1)?;
        let a = action[0].clamp(-self.params.action_bound, self.params.action_bound);
        self.z += a;
        self.steps += 1;
        self.done = self.steps >= self.params.episode_length;
        Ok(StepResult {
            state: self.state(),
            reward: -(self.z * self.z) - self.params.action_cost * a * a,
            done: self.done,
        })
    }

    fn oracle_dynamics(&self) -> Arc<dyn GaussianDynamics> {
        Arc::new(LinearGaussianDynamics::shift(1, ORACLE_STD_FLOOR))
    }

    fn oracle_reward(&self) -> Arc<dyn RewardModel> {
        Arc::new(QuadraticReward::new(DVector::zeros(1), DVector::from_element(1, 1.0)))
    }

    fn action_cost(&self) -> f64 {
        self.params.action_cost
    }

    fn dense_reward(&self) -> bool {
        true
    }

    fn succeeded(&self) -> bool {
        self.z.abs() < 0.05
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_reward_matches_closed_form() {
        let mut env = LqEnv::new(LqParams::default());
        env.reset(0);
        let r = env.step(&DVector::from_element(1, -0.1)).unwrap();
        let z = LqParams::default().z0 - 0.1;
        assert!((r.reward - (-(z * z) - 0.01 * 0.01)).abs() < 1e-15);
        assert!((r.state[0] - z).abs() < 1e-15);
    }

    #[test]
    fn oracle_reproduces_unclamped_steps() {
        let mut env = LqEnv::new(LqParams::default());
        let z = env.reset(3);
        let a = DVector::from_element(1, 0.4);
        let pred = env.oracle_dynamics().predict(&z, &a).unwrap();
        let s = env.step(&a).unwrap();
        assert!((pred.mean[0] - s.state[0]).abs() < 1e-15);
        let r = env.oracle_reward().reward(&s.state) - env.action_cost() * 0.16;
        assert!((r - s.reward).abs() < 1e-15);
    }
}

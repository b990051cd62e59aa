use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, vec2, Env, StepResult, ORACLE_STD_FLOOR};
use crate::dynamics::{check_dims, ActionVec, GaussianDynamics, Linearization, Prediction, RewardModel, StateVec};
use crate::error::{Error, Result};

pub const DT: f64 = 0.05;
pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const TORQUE_COST: f64 = 0.001;
pub const VELOCITY_COST: f64 = 0.1;

/// Wraps to `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

fn integrate(theta: f64, omega: f64, torque: f64) -> (f64, f64) {
    let omega = omega + DT * ((GRAVITY / LENGTH) * theta.sin() + torque / (MASS * LENGTH * LENGTH));
    (wrap_angle(theta + DT * omega), omega)
}

/// Torque-limited pendulum, `θ = 0` upright. State `(θ, θ̇)`.
#[derive(Debug, Clone)]
pub struct PendulumEnv {
    episode_length: usize,
    theta: f64,
    omega: f64,
    steps: usize,
    done: bool,
}

impl PendulumEnv {
    pub fn new(episode_length: usize) -> Self {
        Self {
            episode_length,
            theta: PI,
            omega: 0.0,
            steps: 0,
            done: false,
        }
    }

    /// Places the pendulum at an explicit state and restarts the episode clock.
    pub fn set_state(&mut self, theta: f64, omega: f64) {
        self.theta = wrap_angle(theta);
        self.omega = omega;
        self.steps = 0;
        self.done = false;
    }
}

impl Env for PendulumEnv {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> f64 {
        MAX_TORQUE
    }

    fn episode_length(&self) -> usize {
        self.episode_length
    }

    /// Starts hanging down with a small seeded perturbation.
    fn reset(&mut self, seed: u64) -> StateVec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = PI + rng.random_range(-0.1..0.1);
        let omega = rng.random_range(-0.1..0.1);
        self.set_state(theta, omega);
        self.state()
    }

    fn state(&self) -> StateVec {
        vec2(self.theta, self.omega)
    }

    fn step(&mut self, action: &ActionVec) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        check_action(action, 1)?;
        let u = action[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let (theta, omega) = integrate(self.theta, self.omega, u);
        self.theta = theta;
        self.omega = omega;
        self.steps += 1;
        self.done = self.steps >= self.episode_length;
        let reward = -(theta * theta + VELOCITY_COST * omega * omega + TORQUE_COST * u * u);
        Ok(StepResult {
            state: self.state(),
            reward,
            done: self.done,
        })
    }

    fn oracle_dynamics(&self) -> Arc<dyn GaussianDynamics> {
        Arc::new(PendulumDynamics)
    }

    fn oracle_reward(&self) -> Arc<dyn RewardModel> {
        Arc::new(PendulumReward)
    }

    fn action_cost(&self) -> f64 {
        TORQUE_COST
    }

    fn dense_reward(&self) -> bool {
        true
    }

    /// Upright within 0.1 rad at the current step.
    fn succeeded(&self) -> bool {
        self.theta.abs() < 0.1
    }
}

/// Semi-implicit Euler pendulum with the torque clamped to the bound.
#[derive(Debug, Clone, Copy)]
pub struct PendulumDynamics;

impl GaussianDynamics for PendulumDynamics {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn predict(&self, z: &StateVec, a: &ActionVec) -> Result<Prediction> {
        check_dims(z, a, 2, 1)?;
        let (theta, omega) = integrate(z[0], z[1], a[0].clamp(-MAX_TORQUE, MAX_TORQUE));
        Ok(Prediction {
            mean: vec2(theta, omega),
            std: DVector::from_element(2, ORACLE_STD_FLOOR),
        })
    }

    fn linearize(&self, z: &StateVec, a: &ActionVec) -> Result<Linearization> {
        let p = self.predict(z, a)?;
        let k = GRAVITY / LENGTH;
        let pass = if a[0].abs() <= MAX_TORQUE { 1.0 } else { 0.0 };
        let du = pass / (MASS * LENGTH * LENGTH);
        // ω' = ω + dt(k sinθ + u);  θ' = θ + dt ω'
        let dw_dth = DT * k * z[0].cos();
        let mean_z = DMatrix::from_row_slice(2, 2, &[1.0 + DT * dw_dth, DT, dw_dth, 1.0]);
        let mean_a = DMatrix::from_row_slice(2, 1, &[DT * DT * du, DT * du]);
        Ok(Linearization {
            mean: p.mean,
            std: p.std,
            mean_z,
            mean_a,
            std_z: DMatrix::zeros(2, 2),
            std_a: DMatrix::zeros(2, 1),
        })
    }
}

/// State part of the pendulum reward, `-(wrap(θ)² + 0.1 θ̇²)`.
#[derive(Debug, Clone, Copy)]
pub struct PendulumReward;

impl RewardModel for PendulumReward {
    fn state_dim(&self) -> usize {
        2
    }

    fn reward(&self, z: &StateVec) -> f64 {
        let th = wrap_angle(z[0]);
        -(th * th + VELOCITY_COST * z[1] * z[1])
    }

    fn gradient(&self, z: &StateVec) -> StateVec {
        vec2(-2.0 * wrap_angle(z[0]), -2.0 * VELOCITY_COST * z[1])
    }

    fn hessian(&self, _z: &StateVec) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_diagonal(&vec2(-2.0, -2.0 * VELOCITY_COST)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_rest_is_an_equilibrium() {
        let mut e = PendulumEnv::new(200);
        e.set_state(0.0, 0.0);
        let s = e.step(&DVector::from_element(1, 0.0)).unwrap();
        assert_eq!(s.state, vec2(0.0, 0.0));
        assert_eq!(s.reward, 0.0);
    }

    #[test]
    fn horizontal_start_gains_gravity_velocity() {
        let mut e = PendulumEnv::new(200);
        e.set_state(PI / 2.0, 0.0);
        let s = e.step(&DVector::from_element(1, 0.0)).unwrap();
        assert!((s.state[1] - DT * GRAVITY / LENGTH).abs() < 1e-12);
        assert!((s.state[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn torque_is_clamped() {
        let mut a = PendulumEnv::new(200);
        let mut b = PendulumEnv::new(200);
        a.set_state(0.3, 0.0);
        b.set_state(0.3, 0.0);
        let sa = a.step(&DVector::from_element(1, 5.0)).unwrap();
        let sb = b.step(&DVector::from_element(1, 2.0)).unwrap();
        assert_eq!(sa.state, sb.state);
    }

    #[test]
    fn velocity_sensitivity_to_angle_at_upright() {
        let lin = PendulumDynamics
            .linearize(&vec2(0.0, 0.0), &DVector::from_element(1, 0.0))
            .unwrap();
        assert!((lin.mean_z[(1, 0)] - DT * GRAVITY / LENGTH).abs() < 1e-15);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn oracle_matches_env_trajectory() {
        let mut e = PendulumEnv::new(50);
        let mut z = e.reset(7);
        for i in 0..50 {
            let a = DVector::from_element(1, 2.5 * ((i as f64) * 0.3).sin());
            let pred = PendulumDynamics.mean(&z, &a).unwrap();
            let s = e.step(&a).unwrap();
            assert_eq!(pred, s.state);
            z = s.state;
        }
    }
}

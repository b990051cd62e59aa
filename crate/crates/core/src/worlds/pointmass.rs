use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_action, clamp_action, vec2, Env, PointMassParams, StepResult, ORACLE_STD_FLOOR};
use crate::dynamics::{
    check_dims, ActionVec, GaussianBumpReward, GaussianDynamics, Linearization, Prediction, RewardModel, StateVec,
};
use crate::error::{Error, Result};

pub const POINTMASS_ACTION_BOUND: f64 = 0.1;
pub const SUCCESS_RADIUS: f64 = 0.1;
pub(super) const DEFAULT_REWARD_WIDTH: f64 = 0.25;
/// Points this close to the success circle count as on it, not inside.
const BOUNDARY_TOL: f64 = 1e-9;

fn inside_goal(pos: &StateVec, goal: &StateVec) -> bool {
    (pos - goal).norm() < SUCCESS_RADIUS - BOUNDARY_TOL
}

/// 2D point moved by bounded displacements toward a goal `d` away along +x.
#[derive(Debug, Clone)]
pub struct PointMassEnv {
    params: PointMassParams,
    goal: StateVec,
    pos: StateVec,
    steps: usize,
    done: bool,
    success: bool,
    rng: ChaCha8Rng,
}

impl PointMassEnv {
    pub fn new(params: PointMassParams) -> Self {
        let goal = vec2(params.d, 0.0);
        Self {
            params,
            goal,
            pos: vec2(0.0, 0.0),
            steps: 0,
            done: false,
            success: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn goal(&self) -> &StateVec {
        &self.goal
    }

    pub fn params(&self) -> &PointMassParams {
        &self.params
    }

    fn reward_at(&self, pos: &StateVec) -> f64 {
        if self.params.sparse {
            if inside_goal(pos, &self.goal) {
                1.0
            } else {
                0.0
            }
        } else {
            -(pos - &self.goal).norm()
        }
    }
}

impl Env for PointMassEnv {
    fn name(&self) -> &'static str {
        "pointmass"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> f64 {
        POINTMASS_ACTION_BOUND
    }

    fn episode_length(&self) -> usize {
        self.params.episode_length
    }

    fn reset(&mut self, seed: u64) -> StateVec {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.pos = vec2(0.0, 0.0);
        self.steps = 0;
        self.done = false;
        self.success = false;
        self.pos.clone()
    }

    fn state(&self) -> StateVec {
        self.pos.clone()
    }

    fn step(&mut self, action: &ActionVec) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        check_action(action, 2)?;
        let mut next = &self.pos + clamp_action(action, POINTMASS_ACTION_BOUND);
        if self.params.noise_std > 0.0 {
            for v in next.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut self.rng);
                *v += self.params.noise_std * n;
            }
        }
        self.pos = next;
        self.steps += 1;
        let reward = self.reward_at(&self.pos);
        self.success = inside_goal(&self.pos, &self.goal);
        self.done = (self.params.sparse && self.success) || self.steps >= self.params.episode_length;
        Ok(StepResult {
            state: self.pos.clone(),
            reward,
            done: self.done,
        })
    }

    fn oracle_dynamics(&self) -> Arc<dyn GaussianDynamics> {
        Arc::new(PointMassDynamics {
            action_bound: POINTMASS_ACTION_BOUND,
            std: self.params.noise_std.max(ORACLE_STD_FLOOR),
        })
    }

    fn oracle_reward(&self) -> Arc<dyn RewardModel> {
        if self.params.sparse {
            Arc::new(GaussianBumpReward::new(self.goal.clone(), self.params.reward_width, 1.0))
        } else {
            Arc::new(NegativeDistance {
                goal: self.goal.clone(),
            })
        }
    }

    fn dense_reward(&self) -> bool {
        !self.params.sparse
    }

    fn succeeded(&self) -> bool {
        self.success
    }
}

/// `z' = z + clamp(a, ±a_m) + N(0, std²)`.
#[derive(Debug, Clone)]
pub struct PointMassDynamics {
    pub action_bound: f64,
    pub std: f64,
}

impl GaussianDynamics for PointMassDynamics {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn predict(&self, z: &StateVec, a: &ActionVec) -> Result<Prediction> {
        check_dims(z, a, 2, 2)?;
        Ok(Prediction {
            mean: z + clamp_action(a, self.action_bound),
            std: DVector::from_element(2, self.std),
        })
    }

    fn linearize(&self, z: &StateVec, a: &ActionVec) -> Result<Linearization> {
        let p = self.predict(z, a)?;
        let pass = DVector::from_fn(2, |i, _| if a[i].abs() <= self.action_bound { 1.0 } else { 0.0 });
        Ok(Linearization {
            mean: p.mean,
            std: p.std,
            mean_z: DMatrix::identity(2, 2),
            mean_a: DMatrix::from_diagonal(&pass),
            std_z: DMatrix::zeros(2, 2),
            std_a: DMatrix::zeros(2, 2),
        })
    }
}

/// Dense reward `-‖z - goal‖`.
#[derive(Debug, Clone)]
pub struct NegativeDistance {
    pub goal: StateVec,
}

impl RewardModel for NegativeDistance {
    fn state_dim(&self) -> usize {
        self.goal.len()
    }

    fn reward(&self, z: &StateVec) -> f64 {
        -(z - &self.goal).norm()
    }

    fn gradient(&self, z: &StateVec) -> StateVec {
        let d = z - &self.goal;
        let n = d.norm();
        if n == 0.0 {
            DVector::zeros(z.len())
        } else {
            d / -n
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::rollout_mean;

    fn env(d: f64, sparse: bool) -> PointMassEnv {
        PointMassEnv::new(PointMassParams {
            d,
            sparse,
            ..Default::default()
        })
    }

    #[test]
    fn four_steps_reach_goal_at_point_four() {
        let mut e = env(0.4, true);
        e.reset(0);
        let a = vec2(0.1, 0.0);
        for _ in 0..3 {
            let s = e.step(&a).unwrap();
            assert_eq!(s.reward, 0.0);
            assert!(!s.done);
        }
        let s = e.step(&a).unwrap();
        assert_eq!(s.reward, 1.0);
        assert!(s.done && e.succeeded());
        assert!(matches!(e.step(&a), Err(Error::EpisodeDone)));
    }

    #[test]
    fn actions_are_clamped() {
        let mut e = env(3.0, true);
        e.reset(0);
        let s = e.step(&vec2(0.5, 0.0)).unwrap();
        assert!((s.state - vec2(0.1, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn dense_reward_is_negative_distance() {
        let mut e = env(1.0, false);
        e.reset(0);
        let s = e.step(&vec2(0.1, 0.0)).unwrap();
        assert!((s.reward + 0.9).abs() < 1e-12);
    }

    #[test]
    fn oracle_rollout_reproduces_noiseless_env() {
        let mut e = env(5.0, true);
        let z1 = e.reset(3);
        let actions: Vec<ActionVec> = (0..20)
            .map(|i| vec2(0.3 * ((i as f64) * 0.7).sin(), -0.05 * i as f64))
            .collect();
        let model = e.oracle_dynamics();
        let states = rollout_mean(model.as_ref(), &z1, &actions).unwrap();
        for (t, a) in actions.iter().enumerate() {
            let s = e.step(a).unwrap();
            assert_eq!(s.state, states[t + 1]);
        }
    }

    #[test]
    fn noisy_env_is_seed_deterministic() {
        let run = |seed| {
            let mut e = PointMassEnv::new(PointMassParams {
                noise_std: 0.05,
                d: 10.0,
                ..Default::default()
            });
            e.reset(seed);
            (0..10).map(|_| e.step(&vec2(0.1, 0.1)).unwrap().state).collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }
}

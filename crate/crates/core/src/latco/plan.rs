use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use super::{action_residual, reward_residual, reward_residual_slope, Multipliers};
use crate::btlm::{ResidualBlock, ResidualBlockSystem};
use crate::dynamics::{rollout_mean, ActionVec, GaussianDynamics, Linearization, StateVec};
use crate::error::{Error, Result};
use crate::planner::PlanProblem;

/// Collocation variables: states `z_2..z_{H+1}` and actions `a_1..a_H`, with
/// the start state held fixed.
///
/// Variable block `t` is `(states[t], actions[t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicPlan {
    pub start: StateVec,
    pub states: Vec<StateVec>,
    pub actions: Vec<ActionVec>,
}

impl DeterministicPlan {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.start.len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, |a| a.len())
    }

    pub fn block_size(&self) -> usize {
        self.state_dim() + self.action_dim()
    }

    /// State preceding transition `t` (the start for `t = 0`).
    pub fn prev_state(&self, t: usize) -> &StateVec {
        if t == 0 {
            &self.start
        } else {
            &self.states[t - 1]
        }
    }

    pub fn to_vars(&self) -> DVector<f64> {
        let b = self.block_size();
        let n = self.state_dim();
        let mut v = DVector::zeros(b * self.horizon());
        for t in 0..self.horizon() {
            v.rows_mut(t * b, n).copy_from(&self.states[t]);
            v.rows_mut(t * b + n, b - n).copy_from(&self.actions[t]);
        }
        v
    }

    pub fn set_vars(&mut self, v: &DVector<f64>) {
        let b = self.block_size();
        let n = self.state_dim();
        for t in 0..self.horizon() {
            self.states[t].copy_from(&v.rows(t * b, n));
            self.actions[t].copy_from(&v.rows(t * b + n, b - n));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().chain(&self.actions).all(|x| x.iter().all(|v| v.is_finite()))
    }
}

fn rollout_plan(model: &dyn GaussianDynamics, z1: &StateVec, actions: Vec<ActionVec>) -> Result<DeterministicPlan> {
    let mut states = rollout_mean(model, z1, &actions)?;
    states.remove(0);
    Ok(DeterministicPlan {
        start: z1.clone(),
        states,
        actions,
    })
}

/// Uniform actions in `[−a_m, a_m]`, states from their mean rollout.
pub fn init_plan(
    model: &dyn GaussianDynamics,
    z1: &StateVec,
    horizon: usize,
    rng: &mut dyn RngCore,
    bound: f64,
) -> Result<DeterministicPlan> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let m = model.action_dim();
    let actions = (0..horizon)
        .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-bound..=bound)))
        .collect();
    rollout_plan(model, z1, actions)
}

/// Zero actions, states from their mean rollout.
pub fn zero_plan(model: &dyn GaussianDynamics, z1: &StateVec, horizon: usize) -> Result<DeterministicPlan> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    rollout_plan(model, z1, vec![DVector::zeros(model.action_dim()); horizon])
}

/// Squared dynamics violation `‖z_{t+1} − μ(z_t, a_t)‖²` of every transition.
pub fn plan_violations(plan: &DeterministicPlan, model: &dyn GaussianDynamics) -> Result<Vec<f64>> {
    (0..plan.horizon())
        .map(|t| {
            let mean = model.mean(plan.prev_state(t), &plan.actions[t])?;
            Ok((&plan.states[t] - mean).norm_squared())
        })
        .collect()
}

/// Residual system of the Lagrangian at `plan`.
///
/// Block `t` stacks, in order: the reward residual of step `t`, the weighted
/// action-bound residual of action `t`, then the weighted dynamics residual of
/// the transition into `states[t]` when `t = 0`, and of the transition into
/// `states[t + 1]` when that exists. The latter couples block `t` to `t + 1`.
pub fn build_system(
    plan: &DeterministicPlan,
    multipliers: &Multipliers,
    problem: &PlanProblem<'_>,
) -> Result<ResidualBlockSystem> {
    let h = plan.horizon();
    let n = plan.state_dim();
    let m = problem.action_dim();
    if multipliers.dynamics.len() != h || multipliers.action.len() != h {
        return Err(Error::Dimension {
            context: "multipliers",
            expected: h,
            actual: multipliers.dynamics.len().min(multipliers.action.len()),
        });
    }
    if !plan.is_finite() {
        return Err(Error::NonFinite("plan"));
    }
    let lins: Vec<Linearization> = (0..h)
        .map(|t| problem.dynamics.linearize(plan.prev_state(t), &plan.actions[t]))
        .collect::<Result<_>>()?;
    for lin in &lins {
        if lin.mean.iter().chain(lin.mean_z.iter()).chain(lin.mean_a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model prediction"));
        }
    }

    let b = n + m;
    let mut blocks = Vec::with_capacity(h);
    for t in 0..h {
        let z = &plan.states[t];
        let a = &plan.actions[t];
        let first = t == 0;
        let coupled = t + 1 < h;
        let rows = 1 + m + if first { n } else { 0 } + if coupled { n } else { 0 };
        let mut res = DVector::zeros(rows);
        let mut ja = DMatrix::zeros(rows, b);
        let mut jb = coupled.then(|| DMatrix::zeros(rows, b));

        let step_reward = problem.step_reward(z, a);
        if !step_reward.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        res[0] = reward_residual(step_reward);
        let slope = reward_residual_slope(step_reward);
        let grad = problem.reward.gradient(z);
        for i in 0..n {
            ja[(0, i)] = slope * grad[i];
        }
        for i in 0..m {
            ja[(0, n + i)] = slope * (-2.0 * problem.action_cost * a[i]);
        }

        let w_act = multipliers.action[t].sqrt();
        let act = action_residual(a, problem.action_bound);
        for i in 0..m {
            res[1 + i] = w_act * act[i];
            if act[i] > 0.0 {
                ja[(1 + i, n + i)] = w_act * a[i].signum();
            }
        }

        let mut row = 1 + m;
        if first {
            let w = multipliers.dynamics[0].sqrt();
            let lin = &lins[0];
            res.rows_mut(row, n).copy_from(&((z - &lin.mean) * w));
            for i in 0..n {
                ja[(row + i, i)] = w;
            }
            ja.view_mut((row, n), (n, m)).copy_from(&(&lin.mean_a * -w));
            row += n;
        }
        if let Some(jb) = jb.as_mut() {
            let w = multipliers.dynamics[t + 1].sqrt();
            let lin = &lins[t + 1];
            res.rows_mut(row, n).copy_from(&((&plan.states[t + 1] - &lin.mean) * w));
            ja.view_mut((row, 0), (n, n)).copy_from(&(&lin.mean_z * -w));
            for i in 0..n {
                jb[(row + i, i)] = w;
            }
            jb.view_mut((row, n), (n, m)).copy_from(&(&lin.mean_a * -w));
        }
        blocks.push(ResidualBlock {
            residual: res,
            a: ja,
            b: jb,
        });
    }
    ResidualBlockSystem::new(vec![b; h], blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ConstantReward, LinearGaussianDynamics};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn init_plan_is_feasible_and_seeded() {
        let m = LinearGaussianDynamics::shift(2, 0.1);
        let z1 = v(&[0.3, -0.2]);
        let a = init_plan(&m, &z1, 6, &mut ChaCha8Rng::seed_from_u64(1), 0.5).unwrap();
        let b = init_plan(&m, &z1, 6, &mut ChaCha8Rng::seed_from_u64(1), 0.5).unwrap();
        assert_eq!(a, b);
        assert!(plan_violations(&a, &m).unwrap().iter().all(|&x| x == 0.0));
        assert!(a.actions.iter().all(|x| x.amax() <= 0.5));
    }

    #[test]
    fn rollout_composition_of_given_actions() {
        let m = LinearGaussianDynamics::shift(1, 0.1);
        let plan = rollout_plan(&m, &v(&[0.0]), vec![v(&[0.3]), v(&[-0.1])]).unwrap();
        assert!((plan.states[0][0] - 0.3).abs() < 1e-15);
        assert!((plan.states[1][0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn vars_round_trip() {
        let m = LinearGaussianDynamics::shift(2, 0.1);
        let mut plan = init_plan(&m, &v(&[0.0, 0.0]), 4, &mut ChaCha8Rng::seed_from_u64(2), 1.0).unwrap();
        let orig = plan.clone();
        let vars = plan.to_vars();
        plan.set_vars(&(&vars * 2.0));
        plan.set_vars(&vars);
        assert_eq!(plan, orig);
    }

    #[test]
    fn feasible_zero_reward_cost_is_horizon_ln2_squared() {
        let m = LinearGaussianDynamics::shift(1, 0.1);
        let r = ConstantReward { dim: 1, value: 0.0 };
        let z1 = v(&[0.0]);
        let plan = init_plan(&m, &z1, 5, &mut ChaCha8Rng::seed_from_u64(3), 0.5).unwrap();
        let problem = PlanProblem::new(&m, &r, &z1, 5, 1.0);
        let sys = build_system(&plan, &Multipliers::constant(5, 1.0, 1.0), &problem).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((sys.sum_squares() - 5.0 * ln2 * ln2).abs() < 1e-12);
    }

    #[test]
    fn dynamics_weight_scales_cost() {
        let m = LinearGaussianDynamics::shift(1, 0.1);
        let r = ConstantReward { dim: 1, value: 0.0 };
        let z1 = v(&[0.0]);
        let mut plan = init_plan(&m, &z1, 3, &mut ChaCha8Rng::seed_from_u64(4), 0.5).unwrap();
        plan.states[1][0] += 0.7;
        let problem = PlanProblem::new(&m, &r, &z1, 3, 1.0);
        let base = 3.0 * std::f64::consts::LN_2.powi(2);
        let c1 = build_system(&plan, &Multipliers::constant(3, 1.0, 1.0), &problem).unwrap().sum_squares() - base;
        let c4 = build_system(&plan, &Multipliers::constant(3, 4.0, 1.0), &problem).unwrap().sum_squares() - base;
        assert!((c4 - 4.0 * c1).abs() < 1e-12);
    }
}

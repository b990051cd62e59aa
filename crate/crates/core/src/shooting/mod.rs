//! Shooting planners: optimize actions only, evaluating the objective through
//! recursive application of the dynamics.

mod gradient;
mod ilqr;
mod sampling;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout_mean, rollout_sample, ActionVec, StateVec};
use crate::error::{Error, Result};
use crate::planner::{PlanDiagnostics, PlanOutcome, PlanProblem};

pub use gradient::{shooting_gd_plan, shooting_gn_plan, shooting_residuals, GdConfig, GdPlanner, GnConfig, GnPlanner};
pub use ilqr::{ilqr_plan, IlqrConfig, IlqrPlanner};
pub use sampling::{
    cem_plan, cem_refit, mppi_plan, mppi_refit, mppi_weights, CemConfig, CemPlanner, MppiConfig, MppiPlanner,
};

/// How candidate action sequences are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// Sum of rewards along the mean rollout.
    Mean,
    /// Sum of rewards along one sampled rollout.
    #[default]
    Sampled,
}

/// `Σ_t r(z_{t+1}) − c‖a_t‖²` over the `H` planned states of one rollout.
pub fn expected_return(
    problem: &PlanProblem<'_>,
    actions: &[ActionVec],
    mode: RolloutMode,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let states = match mode {
        RolloutMode::Mean => rollout_mean(problem.dynamics, problem.start, actions)?,
        RolloutMode::Sampled => rollout_sample(problem.dynamics, problem.start, actions, rng)?,
    };
    Ok(states
        .iter()
        .skip(1)
        .zip(actions)
        .map(|(z, a)| problem.step_reward(z, a))
        .sum())
}

/// Mean-rollout return and its gradient in every action, by the adjoint
/// recursion through the model Jacobians.
pub fn return_gradient(problem: &PlanProblem<'_>, actions: &[ActionVec]) -> Result<(f64, Vec<ActionVec>)> {
    let h = actions.len();
    let mut states = Vec::with_capacity(h + 1);
    let mut jac = Vec::with_capacity(h);
    states.push(problem.start.clone());
    for a in actions {
        let lin = problem.dynamics.linearize(states.last().unwrap(), a)?;
        states.push(lin.mean);
        jac.push((lin.mean_z, lin.mean_a));
    }
    let mut ret = 0.0;
    let mut grads = vec![DVector::zeros(0); h];
    let mut adj = DVector::zeros(problem.state_dim());
    for t in (0..h).rev() {
        let z = &states[t + 1];
        ret += problem.step_reward(z, &actions[t]);
        adj += problem.reward.gradient(z);
        grads[t] = jac[t].1.tr_mul(&adj) - &actions[t] * (2.0 * problem.action_cost);
        adj = jac[t].0.tr_mul(&adj);
    }
    if !ret.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("return gradient"));
    }
    Ok((ret, grads))
}

/// `d z_{t+1} / d a_s` for all `s ≤ t`, stored as `sens[t][s]` (dense, small
/// problems only). Also returns the mean rollout.
pub(crate) fn rollout_sensitivities(
    problem: &PlanProblem<'_>,
    actions: &[ActionVec],
) -> Result<(Vec<StateVec>, Vec<Vec<DMatrix<f64>>>)> {
    let h = actions.len();
    let mut states = vec![problem.start.clone()];
    let mut sens: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(h);
    for (t, a) in actions.iter().enumerate() {
        let lin = problem.dynamics.linearize(&states[t], a)?;
        let mut row: Vec<DMatrix<f64>> = (0..t).map(|s| &lin.mean_z * &sens[t - 1][s]).collect();
        row.push(lin.mean_a);
        sens.push(row);
        states.push(lin.mean);
    }
    Ok((states, sens))
}

pub(crate) fn uniform_actions(problem: &PlanProblem<'_>, rng: &mut dyn RngCore) -> Vec<ActionVec> {
    let b = problem.action_bound;
    (0..problem.horizon)
        .map(|_| DVector::from_fn(problem.action_dim(), |_, _| rng.random_range(-b..=b)))
        .collect()
}

/// Wraps shooting actions as a planner outcome: clamped actions, their mean
/// rollout, and zero dynamics violation.
pub(crate) fn shooting_outcome(
    problem: &PlanProblem<'_>,
    actions: &[ActionVec],
    planned_return: Option<f64>,
    diagnostics: PlanDiagnostics,
) -> Result<PlanOutcome> {
    let actions: Vec<ActionVec> = actions.iter().map(|a| problem.clamp(a)).collect();
    let mut states = rollout_mean(problem.dynamics, problem.start, &actions)?;
    states.remove(0);
    let planned_return = match planned_return {
        Some(r) => r,
        None => states.iter().zip(&actions).map(|(z, a)| problem.step_reward(z, a)).sum(),
    };
    Ok(PlanOutcome {
        actions,
        states,
        planned_return,
        max_violation: 0.0,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ConstantReward, LinearGaussianDynamics, MlpGaussianDynamics, QuadraticReward};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn constant_reward_sums_over_horizon() {
        let m = LinearGaussianDynamics::shift(1, 0.3);
        let r = ConstantReward { dim: 1, value: 2.0 };
        let z1 = v(&[0.0]);
        let p = PlanProblem::new(&m, &r, &z1, 4, 1.0);
        let acts = vec![v(&[0.1]); 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(expected_return(&p, &acts, RolloutMode::Mean, &mut rng).unwrap(), 8.0);
        assert_eq!(expected_return(&p, &acts, RolloutMode::Sampled, &mut rng).unwrap(), 8.0);
    }

    #[test]
    fn noiseless_modes_agree() {
        let m = LinearGaussianDynamics::shift(2, 0.0);
        let r = QuadraticReward::new(v(&[1.0, 0.0]), v(&[1.0, 1.0]));
        let z1 = v(&[0.0, 0.5]);
        let p = PlanProblem::new(&m, &r, &z1, 3, 1.0);
        let acts = vec![v(&[0.2, -0.1]), v(&[0.3, 0.0]), v(&[-0.1, 0.4])];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = expected_return(&p, &acts, RolloutMode::Mean, &mut rng).unwrap();
        let b = expected_return(&p, &acts, RolloutMode::Sampled, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = MlpGaussianDynamics::random(2, 2, &mut rng);
        let r = QuadraticReward::new(v(&[0.5, -0.2]), v(&[1.0, 0.3]));
        let z1 = v(&[0.1, -0.3]);
        let p = PlanProblem::new(&m, &r, &z1, 5, 1.0).with_action_cost(0.05);
        let acts = uniform_actions(&p, &mut rng);
        let (ret, g) = return_gradient(&p, &acts).unwrap();
        assert!((ret - expected_return(&p, &acts, RolloutMode::Mean, &mut rng).unwrap()).abs() < 1e-12);
        let h = 1e-6;
        for t in 0..5 {
            for i in 0..2 {
                let mut up = acts.clone();
                up[t][i] += h;
                let mut dn = acts.clone();
                dn[t][i] -= h;
                let fd = (expected_return(&p, &up, RolloutMode::Mean, &mut rng).unwrap()
                    - expected_return(&p, &dn, RolloutMode::Mean, &mut rng).unwrap())
                    / (2.0 * h);
                assert!((g[t][i] - fd).abs() < 1e-6, "t={t} i={i}");
            }
        }
    }
}

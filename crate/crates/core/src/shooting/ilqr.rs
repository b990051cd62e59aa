use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::shooting_outcome;
use crate::defaults as d;
use crate::dynamics::{rollout_mean, ActionVec, StateVec};
use crate::error::{Error, Result};
use crate::planner::{IterationRecord, PlanDiagnostics, PlanOutcome, PlanProblem, Planner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlqrConfig {
    pub max_iterations: usize,
    pub reg_init: f64,
    pub reg_factor: f64,
    pub reg_max: f64,
    /// Step sizes tried are `1, 1/2, 1/4, …` (this many of them).
    pub line_search_steps: usize,
    /// Stop when a accepted step improves the return by less than this.
    pub tolerance: f64,
}

impl Default for IlqrConfig {
    fn default() -> Self {
        Self {
            max_iterations: d::ILQR_MAX_ITERATIONS,
            reg_init: d::ILQR_REG_INIT,
            reg_factor: d::ILQR_REG_FACTOR,
            reg_max: d::ILQR_REG_MAX,
            line_search_steps: d::ILQR_LINE_SEARCH_STEPS,
            tolerance: 1e-10,
        }
    }
}

impl IlqrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.line_search_steps == 0 {
            return Err(Error::config("max_iterations", "iteration counts must be at least 1"));
        }
        if !(self.reg_init >= 0.0) || !(self.reg_factor > 1.0) || !(self.reg_max > self.reg_init) {
            return Err(Error::config(
                "reg_init",
                "need reg_init ≥ 0, reg_factor > 1 and reg_max > reg_init",
            ));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::config("tolerance", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Smallest regularizer used after a failed factorization at zero.
const REG_FLOOR: f64 = 1e-6;

struct Gains {
    k: Vec<DVector<f64>>,
    gain: Vec<DMatrix<f64>>,
}

/// Cost Hessian of `−r` at `z`: the exact one when the reward provides it,
/// otherwise the Gauss–Newton surrogate `∇r ∇rᵀ`.
fn state_cost_hessian(problem: &PlanProblem<'_>, z: &StateVec, grad: &StateVec) -> DMatrix<f64> {
    match problem.reward.hessian(z) {
        Some(h) => -h,
        None => grad * grad.transpose(),
    }
}

/// Backward pass on the quadratized cost `Σ −r(z_{t+1}) + c‖a_t‖²`.
/// `None` when some `Q_uu` is not positive definite at regularizer `mu`.
fn backward(problem: &PlanProblem<'_>, states: &[StateVec], actions: &[ActionVec], mu: f64) -> Result<Option<Gains>> {
    let h = actions.len();
    let m = problem.action_dim();
    let mut k = vec![DVector::zeros(m); h];
    let mut gain = vec![DMatrix::zeros(m, problem.state_dim()); h];
    let z_last = &states[h];
    let g_last = problem.reward.gradient(z_last);
    let mut vx = -&g_last;
    let mut vxx = state_cost_hessian(problem, z_last, &g_last);
    for t in (0..h).rev() {
        let lin = problem.dynamics.linearize(&states[t], &actions[t])?;
        let (fx, fu) = (&lin.mean_z, &lin.mean_a);
        let qx = fx.tr_mul(&vx);
        let qu = fu.tr_mul(&vx) + &actions[t] * (2.0 * problem.action_cost);
        let qxx = fx.tr_mul(&(&vxx * fx));
        let mut quu = fu.tr_mul(&(&vxx * fu));
        for i in 0..m {
            quu[(i, i)] += 2.0 * problem.action_cost + mu;
        }
        let qux = fu.tr_mul(&(&vxx * fx));
        let Some(chol) = quu.clone().cholesky() else {
            return Ok(None);
        };
        let kt = -chol.solve(&qu);
        let kk = -chol.solve(&qux);
        vx = &qx + kk.tr_mul(&(&quu * &kt)) + kk.tr_mul(&qu) + qux.tr_mul(&kt);
        vxx = &qxx + kk.tr_mul(&(&quu * &kk)) + kk.tr_mul(&qux) + qux.tr_mul(&kk);
        vxx = (&vxx + vxx.transpose()) * 0.5;
        if t > 0 {
            let z = &states[t];
            let g = problem.reward.gradient(z);
            vx -= &g;
            vxx += state_cost_hessian(problem, z, &g);
        }
        k[t] = kt;
        gain[t] = kk;
    }
    Ok(Some(Gains { k, gain }))
}

fn plan_return(problem: &PlanProblem<'_>, states: &[StateVec], actions: &[ActionVec]) -> f64 {
    states.iter().skip(1).zip(actions).map(|(z, a)| problem.step_reward(z, a)).sum()
}

/// Forward pass `a = clamp(ā + α·k + K(z − z̄))` along the model mean.
fn forward(
    problem: &PlanProblem<'_>,
    states: &[StateVec],
    actions: &[ActionVec],
    gains: &Gains,
    alpha: f64,
) -> Result<(Vec<StateVec>, Vec<ActionVec>)> {
    let mut new_states = vec![problem.start.clone()];
    let mut new_actions = Vec::with_capacity(actions.len());
    for t in 0..actions.len() {
        let dz = &new_states[t] - &states[t];
        let a = problem.clamp(&(&actions[t] + &gains.k[t] * alpha + &gains.gain[t] * dz));
        new_states.push(problem.dynamics.mean(&new_states[t], &a)?);
        new_actions.push(a);
    }
    Ok((new_states, new_actions))
}

/// Iterative LQR from zero actions, with step-size line search and a
/// regularizer that grows on failed factorizations or rejected steps.
/// Returns the open-loop actions.
pub fn ilqr_plan(problem: &PlanProblem<'_>, cfg: &IlqrConfig) -> Result<PlanOutcome> {
    problem.validate()?;
    cfg.validate()?;
    let mut actions = vec![DVector::zeros(problem.action_dim()); problem.horizon];
    let mut states = rollout_mean(problem.dynamics, problem.start, &actions)?;
    let mut ret = plan_return(problem, &states, &actions);
    let mut mu = cfg.reg_init;
    let mut diagnostics = PlanDiagnostics::default();
    let grow = |mu: f64| (mu * cfg.reg_factor).max(REG_FLOOR);
    for it in 0..cfg.max_iterations {
        let gains = match backward(problem, &states, &actions, mu).map_err(|e| e.at_iteration(it))? {
            Some(g) => g,
            None => {
                mu = grow(mu);
                if mu > cfg.reg_max {
                    return Err(Error::Ilqr(format!(
                        "control Hessian not positive definite with regularizer above {:e} at iteration {it}",
                        cfg.reg_max
                    )));
                }
                continue;
            }
        };
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..cfg.line_search_steps {
            let (s, a) = forward(problem, &states, &actions, &gains, alpha).map_err(|e| e.at_iteration(it))?;
            let r = plan_return(problem, &s, &a);
            if r.is_finite() && r > ret {
                accepted = Some((s, a, r));
                break;
            }
            alpha *= 0.5;
        }
        let done = match accepted {
            Some((s, a, r)) => {
                let gain = r - ret;
                states = s;
                actions = a;
                ret = r;
                mu /= cfg.reg_factor;
                gain < cfg.tolerance
            }
            None => {
                mu = grow(mu);
                mu > cfg.reg_max
            }
        };
        diagnostics.push(IterationRecord {
            iteration: it,
            reward_sum: ret,
            max_violation: 0.0,
            mean_lambda_dyn: 0.0,
            mean_lambda_act: 0.0,
        });
        if done {
            break;
        }
    }
    shooting_outcome(problem, &actions, None, diagnostics)
}

#[derive(Debug, Clone, Default)]
pub struct IlqrPlanner {
    pub config: IlqrConfig,
}

impl Planner for IlqrPlanner {
    fn name(&self) -> &'static str {
        "ilqr"
    }

    fn plan(&self, problem: &PlanProblem<'_>, _rng: &mut dyn RngCore) -> Result<PlanOutcome> {
        ilqr_plan(problem, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{LinearGaussianDynamics, QuadraticReward};
    use crate::worlds::{PendulumDynamics, PendulumReward};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn single_step_is_one_newton_step() {
        let m = LinearGaussianDynamics::shift(1, 0.0);
        let r = QuadraticReward::new(v(&[0.4]), v(&[1.0]));
        let z1 = v(&[0.0]);
        let p = PlanProblem::new(&m, &r, &z1, 1, 1.0).with_action_cost(0.5);
        let cfg = IlqrConfig {
            max_iterations: 1,
            reg_init: 0.0,
            ..Default::default()
        };
        let out = ilqr_plan(&p, &cfg).unwrap();
        // maximize −(a − 0.4)² − 0.5a²  →  a = 0.8 / 3
        assert!((out.actions[0][0] - 0.8 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pendulum_improves_on_zero_actions() {
        let m = PendulumDynamics;
        let r = PendulumReward;
        let z1 = v(&[std::f64::consts::PI, 0.0]);
        let p = PlanProblem::new(&m, &r, &z1, 60, 2.0).with_action_cost(0.001);
        let out = ilqr_plan(&p, &IlqrConfig::default()).unwrap();
        let zero = vec![DVector::zeros(1); 60];
        let states = rollout_mean(&m, &z1, &zero).unwrap();
        assert!(out.planned_return > plan_return(&p, &states, &zero));
        assert!(out.actions.iter().all(|a| a.amax() <= 2.0));
    }
}

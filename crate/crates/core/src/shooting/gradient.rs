use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{return_gradient, rollout_sensitivities, shooting_outcome, uniform_actions};
use crate::defaults as d;
use crate::dynamics::{ActionVec, Adam};
use crate::error::{Error, Result};
use crate::latco::{action_residual, dual_update, reward_residual, reward_residual_slope};
use crate::planner::{IterationRecord, PlanDiagnostics, PlanOutcome, PlanProblem, Planner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub dual_period: usize,
    pub eps_act: f64,
    pub dual_step: f64,
    pub dual_stabilizer: f64,
    pub lambda_act_init: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            iterations: d::GD_ITERATIONS,
            learning_rate: d::GD_LEARNING_RATE,
            beta1: d::ADAM_BETA1,
            beta2: d::ADAM_BETA2,
            dual_period: d::GD_DUAL_PERIOD,
            eps_act: d::LATCO_EPS_ACT,
            dual_step: d::DUAL_STEP,
            dual_stabilizer: d::DUAL_STABILIZER,
            lambda_act_init: d::LAMBDA_ACT_INIT,
        }
    }
}

fn check_positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive, got {v}")))
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.dual_period == 0 {
            return Err(Error::config("iterations", "iterations and dual_period must be at least 1"));
        }
        check_positive("learning_rate", self.learning_rate)?;
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta1", "moment decays must lie in [0, 1)"));
        }
        check_positive("eps_act", self.eps_act)?;
        check_positive("dual_step", self.dual_step)?;
        check_positive("dual_stabilizer", self.dual_stabilizer)?;
        check_positive("lambda_act_init", self.lambda_act_init)
    }
}

fn excess_penalty(actions: &[ActionVec], lam: &[f64], bound: f64) -> (Vec<f64>, Vec<ActionVec>) {
    let mut viol = Vec::with_capacity(actions.len());
    let mut grads = Vec::with_capacity(actions.len());
    for (a, &l) in actions.iter().zip(lam) {
        let ex = action_residual(a, bound);
        viol.push(ex.norm_squared());
        grads.push(DVector::from_fn(a.len(), |i, _| 2.0 * l * ex[i] * a[i].signum()));
    }
    (viol, grads)
}

/// Adam ascent on the mean-rollout return minus `Σ λ_t‖max(0, |a_t| − a_m)‖²`,
/// with a multiplicative dual step on `λ` every `dual_period` iterations.
pub fn shooting_gd_plan(problem: &PlanProblem<'_>, cfg: &GdConfig, rng: &mut dyn RngCore) -> Result<PlanOutcome> {
    problem.validate()?;
    cfg.validate()?;
    let h = problem.horizon;
    let m = problem.action_dim();
    let mut actions = uniform_actions(problem, rng);
    let mut lam = vec![cfg.lambda_act_init; h];
    let mut adam = Adam::new(cfg.learning_rate);
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    let mut flat = DVector::zeros(h * m);
    let mut diagnostics = PlanDiagnostics::default();
    for k in 0..cfg.iterations {
        let (ret, grads) = return_gradient(problem, &actions).map_err(|e| e.at_iteration(k))?;
        let (viol, pen) = excess_penalty(&actions, &lam, problem.action_bound);
        let descent: Vec<f64> = grads
            .iter()
            .zip(&pen)
            .flat_map(|(g, p)| (p - g).iter().copied().collect::<Vec<_>>())
            .collect();
        if descent.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient").at_iteration(k));
        }
        for t in 0..h {
            flat.rows_mut(t * m, m).copy_from(&actions[t]);
        }
        adam.step(vec![flat.as_mut_slice()], &[&descent]);
        for t in 0..h {
            actions[t].copy_from(&flat.rows(t * m, m));
        }
        if (k + 1) % cfg.dual_period == 0 {
            let (viol, _) = excess_penalty(&actions, &lam, problem.action_bound);
            for t in 0..h {
                lam[t] = dual_update(lam[t], viol[t], cfg.eps_act, cfg.dual_step, cfg.dual_stabilizer)?;
            }
        }
        diagnostics.push(IterationRecord {
            iteration: k,
            reward_sum: ret,
            max_violation: viol.iter().copied().fold(0.0, f64::max),
            mean_lambda_dyn: 0.0,
            mean_lambda_act: lam.iter().sum::<f64>() / h as f64,
        });
    }
    shooting_outcome(problem, &actions, None, diagnostics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnConfig {
    pub iterations: usize,
    pub damping: f64,
    pub eps_act: f64,
    pub dual_step: f64,
    pub dual_stabilizer: f64,
    pub lambda_act_init: f64,
    pub dual_period: usize,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            iterations: d::GN_ITERATIONS,
            damping: d::LM_DAMPING,
            eps_act: d::LATCO_EPS_ACT,
            dual_step: d::DUAL_STEP,
            dual_stabilizer: d::DUAL_STABILIZER,
            lambda_act_init: d::LAMBDA_ACT_INIT,
            dual_period: d::DUAL_PERIOD,
        }
    }
}

impl GnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.dual_period == 0 {
            return Err(Error::config("iterations", "iterations and dual_period must be at least 1"));
        }
        check_positive("damping", self.damping)?;
        check_positive("eps_act", self.eps_act)?;
        check_positive("dual_step", self.dual_step)?;
        check_positive("dual_stabilizer", self.dual_stabilizer)?;
        check_positive("lambda_act_init", self.lambda_act_init)
    }
}

/// Stacked shooting residuals `[softplus(−r_t); √λ_t·excess(a_t)]` and their
/// dense Jacobian in the actions.
pub fn shooting_residuals(
    problem: &PlanProblem<'_>,
    actions: &[ActionVec],
    lam: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let h = actions.len();
    let m = problem.action_dim();
    let (states, sens) = rollout_sensitivities(problem, actions)?;
    let rows = h * (1 + m);
    let mut res = DVector::zeros(rows);
    let mut jac = DMatrix::zeros(rows, h * m);
    for t in 0..h {
        let z = &states[t + 1];
        let a = &actions[t];
        let r = problem.step_reward(z, a);
        if !r.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        let row = t * (1 + m);
        res[row] = reward_residual(r);
        let slope = reward_residual_slope(r);
        let g = problem.reward.gradient(z);
        for s in 0..=t {
            let dr = sens[t][s].tr_mul(&g);
            for i in 0..m {
                jac[(row, s * m + i)] = slope * dr[i];
            }
        }
        for i in 0..m {
            jac[(row, t * m + i)] += slope * (-2.0 * problem.action_cost * a[i]);
        }
        let w = lam[t].sqrt();
        let ex = action_residual(a, problem.action_bound);
        for i in 0..m {
            res[row + 1 + i] = w * ex[i];
            if ex[i] > 0.0 {
                jac[(row + 1 + i, t * m + i)] = w * a[i].signum();
            }
        }
    }
    Ok((res, jac))
}

/// Fixed-damping LM on the shooting residuals, with a dual step on the
/// action-bound multipliers.
pub fn shooting_gn_plan(problem: &PlanProblem<'_>, cfg: &GnConfig, rng: &mut dyn RngCore) -> Result<PlanOutcome> {
    problem.validate()?;
    cfg.validate()?;
    let h = problem.horizon;
    let m = problem.action_dim();
    let mut actions = uniform_actions(problem, rng);
    let mut lam = vec![cfg.lambda_act_init; h];
    let mut diagnostics = PlanDiagnostics::default();
    for k in 0..cfg.iterations {
        let (res, jac) = shooting_residuals(problem, &actions, &lam).map_err(|e| e.at_iteration(k))?;
        let mut normal = jac.tr_mul(&jac);
        for i in 0..normal.nrows() {
            normal[(i, i)] += cfg.damping;
        }
        let step = normal
            .cholesky()
            .ok_or(Error::Factorization { block: 0 })
            .map_err(|e| e.at_iteration(k))?
            .solve(&jac.tr_mul(&res));
        for t in 0..h {
            actions[t] -= step.rows(t * m, m);
        }
        if actions.iter().any(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("actions").at_iteration(k));
        }
        let viol: Vec<f64> = actions
            .iter()
            .map(|a| action_residual(a, problem.action_bound).norm_squared())
            .collect();
        if (k + 1) % cfg.dual_period == 0 {
            for t in 0..h {
                lam[t] = dual_update(lam[t], viol[t], cfg.eps_act, cfg.dual_step, cfg.dual_stabilizer)?;
            }
        }
        let ret = super::expected_return(problem, &actions, super::RolloutMode::Mean, rng)?;
        diagnostics.push(IterationRecord {
            iteration: k,
            reward_sum: ret,
            max_violation: viol.iter().copied().fold(0.0, f64::max),
            mean_lambda_dyn: 0.0,
            mean_lambda_act: lam.iter().sum::<f64>() / h as f64,
        });
    }
    shooting_outcome(problem, &actions, None, diagnostics)
}

#[derive(Debug, Clone, Default)]
pub struct GdPlanner {
    pub config: GdConfig,
}

impl Planner for GdPlanner {
    fn name(&self) -> &'static str {
        "shooting_gd"
    }

    fn plan(&self, problem: &PlanProblem<'_>, rng: &mut dyn RngCore) -> Result<PlanOutcome> {
        shooting_gd_plan(problem, &self.config, rng)
    }
}

#[derive(Debug, Clone, Default)]
pub struct GnPlanner {
    pub config: GnConfig,
}

impl Planner for GnPlanner {
    fn name(&self) -> &'static str {
        "shooting_gn"
    }

    fn plan(&self, problem: &PlanProblem<'_>, rng: &mut dyn RngCore) -> Result<PlanOutcome> {
        shooting_gn_plan(problem, &self.config, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ConstantReward, GaussianBumpReward, LinearGaussianDynamics, MlpGaussianDynamics, QuadraticReward};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn zero_reward_gd_stays_in_bounds() {
        let m = LinearGaussianDynamics::shift(2, 0.0);
        let r = ConstantReward { dim: 2, value: 0.0 };
        let z1 = v(&[0.0, 0.0]);
        let p = PlanProblem::new(&m, &r, &z1, 5, 0.4);
        let out = shooting_gd_plan(&p, &GdConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(out.actions.iter().all(|a| a.amax() <= 0.4));
        assert_eq!(out.planned_return, 0.0);
    }

    #[test]
    fn residual_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = MlpGaussianDynamics::random(2, 2, &mut rng);
        let r = QuadraticReward::new(v(&[0.2, 0.1]), v(&[1.0, 2.0]));
        let z1 = v(&[0.3, -0.1]);
        let p = PlanProblem::new(&m, &r, &z1, 4, 0.5).with_action_cost(0.1);
        let mut acts = uniform_actions(&p, &mut rng);
        acts[1][0] = 0.8;
        let lam = vec![2.0, 3.0, 0.5, 1.0];
        let (_, jac) = shooting_residuals(&p, &acts, &lam).unwrap();
        let h = 1e-6;
        for t in 0..4 {
            for i in 0..2 {
                let mut up = acts.clone();
                up[t][i] += h;
                let mut dn = acts.clone();
                dn[t][i] -= h;
                let fd = (shooting_residuals(&p, &up, &lam).unwrap().0 - shooting_residuals(&p, &dn, &lam).unwrap().0)
                    / (2.0 * h);
                assert!((jac.column(t * 2 + i) - fd).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn gn_single_action_residual_decreases() {
        // A peak well above zero keeps the reward residual small at the
        // optimum, where fixed-damping Gauss-Newton contracts.
        let m = LinearGaussianDynamics::shift(1, 0.0);
        let r = GaussianBumpReward::new(v(&[0.3]), 0.5, 5.0);
        let z1 = v(&[0.0]);
        let p = PlanProblem::new(&m, &r, &z1, 1, 1.0);
        let norms: Vec<f64> = (1..=10)
            .map(|iterations| {
                let cfg = GnConfig {
                    iterations,
                    ..Default::default()
                };
                let out = shooting_gn_plan(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
                shooting_residuals(&p, &out.actions, &[1.0]).unwrap().0.norm()
            })
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{norms:?}");
        let out = shooting_gn_plan(&p, &GnConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!((out.actions[0][0] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn gn_respects_active_bound() {
        let m = LinearGaussianDynamics::shift(1, 0.0);
        let r = QuadraticReward::new(v(&[5.0]), v(&[1.0]));
        let z1 = v(&[0.0]);
        let p = PlanProblem::new(&m, &r, &z1, 3, 0.5);
        let out = shooting_gn_plan(&p, &GnConfig::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(out.actions.iter().all(|a| a.amax() <= 0.5 + 1e-3));
        assert!(out.actions.iter().all(|a| a[0] > 0.45));
    }
}

//! Collocation planners: residuals, multiplier updates, the deterministic
//! planner and the Gaussian (moment-matching) planner.

mod deterministic;
mod gaussian;
mod plan;

use serde::{Deserialize, Serialize};

use crate::defaults as d;
use crate::dynamics::{ActionVec, GaussianDynamics, StateVec};
use crate::error::{Error, Result};
use crate::planner::PlanOutcome;

pub use deterministic::{latco_deterministic, LatcoPlanner, LatcoResult};
pub use gaussian::{
    build_gaussian_system, gaussian_lagrangian_terms, latco_gaussian, GaussianLatcoConfig, GaussianLatcoPlanner, GaussianPlan,
    GaussianResult, MomentTerms, ParticleNoise,
};
pub use plan::{build_system, init_plan, plan_violations, zero_plan, DeterministicPlan};

/// `ln(1 + e^{-r})`, overflow safe.
pub fn reward_residual(r: f64) -> f64 {
    (-r).max(0.0) + (-r.abs()).exp().ln_1p()
}

/// `d/dr ln(1 + e^{-r}) = -1 / (1 + e^{r})`.
pub fn reward_residual_slope(r: f64) -> f64 {
    if r >= 0.0 {
        let e = (-r).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + r.exp())
    }
}

/// `z_next − mean(z, a)`.
pub fn dynamics_residual(
    model: &dyn GaussianDynamics,
    z: &StateVec,
    a: &ActionVec,
    z_next: &StateVec,
) -> Result<StateVec> {
    let mean = model.mean(z, a)?;
    if z_next.len() != mean.len() {
        return Err(Error::Dimension {
            context: "next state",
            expected: mean.len(),
            actual: z_next.len(),
        });
    }
    Ok(z_next - mean)
}

/// Elementwise `max(0, |a| − a_m)`.
pub fn action_residual(a: &ActionVec, bound: f64) -> ActionVec {
    a.map(|v| (v.abs() - bound).max(0.0))
}

/// Multiplicative dual step `λ·(1 + α·ln(v/ε + η))`, clamped to
/// `[LAMBDA_MIN, LAMBDA_MAX]`.
pub fn dual_update(lambda: f64, violation_sq: f64, eps: f64, alpha: f64, eta: f64) -> Result<f64> {
    if !(violation_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "constraint violation must be nonnegative, got {violation_sq}"
        )));
    }
    if !(lambda > 0.0) || !(eps > 0.0) {
        return Err(Error::InvalidArgument("multiplier and tolerance must be positive".into()));
    }
    let next = lambda * (1.0 + alpha * (violation_sq / eps + eta).ln());
    Ok(next.clamp(d::LAMBDA_MIN, d::LAMBDA_MAX))
}

/// Per-timestep Lagrange multipliers. Entry `t` of `dynamics` weighs the
/// transition into planned state `t + 1`; entry `t` of `action` weighs the
/// bound on action `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub dynamics: Vec<f64>,
    pub action: Vec<f64>,
}

impl Multipliers {
    pub fn constant(horizon: usize, dynamics: f64, action: f64) -> Self {
        Self {
            dynamics: vec![dynamics; horizon],
            action: vec![action; horizon],
        }
    }

    pub fn mean_dynamics(&self) -> f64 {
        mean(&self.dynamics)
    }

    pub fn mean_action(&self) -> f64 {
        mean(&self.action)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// How the plan variables are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanInit {
    /// Uniform actions, states from the mean rollout.
    #[default]
    Rollout,
    /// Zero actions, states from the mean rollout.
    Zero,
}

/// Ablations of the deterministic planner.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Multipliers start at a large value instead of relaxing the dynamics.
    NoRelaxation,
    /// Multipliers are held constant.
    FixedMultipliers { lambda_dyn: f64, lambda_act: f64 },
    /// Gradient descent on the Lagrangian with an additive dual step.
    FirstOrder {
        steps: usize,
        dual_period: usize,
        dual_lr: f64,
        primal_lr: f64,
    },
}

impl Ablation {
    pub fn no_relaxation() -> Self {
        Ablation::NoRelaxation
    }

    pub fn fixed_multipliers() -> Self {
        Ablation::FixedMultipliers {
            lambda_dyn: d::FIXED_LAMBDA_DYN,
            lambda_act: d::FIXED_LAMBDA_ACT,
        }
    }

    pub fn first_order() -> Self {
        Ablation::FirstOrder {
            steps: d::FIRST_ORDER_STEPS,
            dual_period: d::FIRST_ORDER_DUAL_PERIOD,
            dual_lr: d::FIRST_ORDER_DUAL_LR,
            primal_lr: d::FIRST_ORDER_PRIMAL_LR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatcoConfig {
    pub iterations: usize,
    pub eps_dyn: f64,
    pub eps_act: f64,
    pub dual_step: f64,
    pub dual_stabilizer: f64,
    pub lambda_dyn_init: f64,
    pub lambda_act_init: f64,
    pub damping: f64,
    pub dual_period: usize,
    pub restarts: usize,
    pub init: PlanInit,
    pub ablation: Ablation,
}

impl Default for LatcoConfig {
    fn default() -> Self {
        Self {
            iterations: d::LATCO_ITERATIONS,
            eps_dyn: d::LATCO_EPS_DYN,
            eps_act: d::LATCO_EPS_ACT,
            dual_step: d::DUAL_STEP,
            dual_stabilizer: d::DUAL_STABILIZER,
            lambda_dyn_init: d::LAMBDA_DYN_INIT,
            lambda_act_init: d::LAMBDA_ACT_INIT,
            damping: d::LM_DAMPING,
            dual_period: d::DUAL_PERIOD,
            restarts: d::RESTARTS,
            init: PlanInit::Rollout,
            ablation: Ablation::None,
        }
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive, got {v}")))
    }
}

fn nonzero(path: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::config(path, "must be at least 1"))
    }
}

impl LatcoConfig {
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        nonzero("iterations", self.iterations)?;
        positive("eps_dyn", self.eps_dyn)?;
        positive("eps_act", self.eps_act)?;
        positive("dual_step", self.dual_step)?;
        positive("dual_stabilizer", self.dual_stabilizer)?;
        positive("lambda_dyn_init", self.lambda_dyn_init)?;
        positive("lambda_act_init", self.lambda_act_init)?;
        positive("damping", self.damping)?;
        nonzero("dual_period", self.dual_period)?;
        nonzero("restarts", self.restarts)?;
        match self.ablation {
            Ablation::None | Ablation::NoRelaxation => Ok(()),
            Ablation::FixedMultipliers { lambda_dyn, lambda_act } => {
                positive("ablation.fixed_multipliers.lambda_dyn", lambda_dyn)?;
                positive("ablation.fixed_multipliers.lambda_act", lambda_act)
            }
            Ablation::FirstOrder {
                steps,
                dual_period,
                dual_lr,
                primal_lr,
            } => {
                nonzero("ablation.first_order.steps", steps)?;
                nonzero("ablation.first_order.dual_period", dual_period)?;
                positive("ablation.first_order.dual_lr", dual_lr)?;
                positive("ablation.first_order.primal_lr", primal_lr)
            }
        }
    }

    /// Initial multipliers, honoring the ablation.
    pub fn initial_multipliers(&self, horizon: usize) -> Multipliers {
        match self.ablation {
            Ablation::NoRelaxation => {
                Multipliers::constant(horizon, d::NO_RELAXATION_LAMBDA, d::NO_RELAXATION_LAMBDA)
            }
            Ablation::FixedMultipliers { lambda_dyn, lambda_act } => {
                Multipliers::constant(horizon, lambda_dyn, lambda_act)
            }
            _ => Multipliers::constant(horizon, self.lambda_dyn_init, self.lambda_act_init),
        }
    }
}

/// Picks among restart results: the highest planned return among those with
/// violation at most `10·eps_dyn`, else the least-violating one.
pub fn select_best_restart(results: Vec<PlanOutcome>, eps_dyn: f64) -> Result<PlanOutcome> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no planner results to select from".into()));
    }
    let limit = 10.0 * eps_dyn;
    let feasible = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.max_violation <= limit)
        .max_by(|a, b| a.1.planned_return.total_cmp(&b.1.planned_return))
        .map(|(i, _)| i);
    let pick = feasible.unwrap_or_else(|| {
        results
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.max_violation.total_cmp(&b.1.max_violation))
            .map(|(i, _)| i)
            .expect("non-empty")
    });
    Ok(results.into_iter().nth(pick).expect("index in range"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::PlanDiagnostics;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    #[test]
    fn reward_residual_values() {
        assert_abs_diff_eq!(reward_residual(0.0), std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(reward_residual(50.0) <= 1e-20);
        assert_abs_diff_eq!(reward_residual(-1.0), 1.313262, epsilon = 1e-6);
        assert!(reward_residual(-800.0).is_finite());
    }

    #[test]
    fn reward_residual_slope_matches_finite_difference() {
        for &r in &[-30.0, -2.0, -0.1, 0.0, 0.4, 3.0, 40.0] {
            let h = 1e-6;
            let fd = (reward_residual(r + h) - reward_residual(r - h)) / (2.0 * h);
            assert_abs_diff_eq!(reward_residual_slope(r), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn action_residual_examples() {
        let r = |a: &[f64]| action_residual(&DVector::from_column_slice(a), 1.0);
        assert_eq!(r(&[0.5]), DVector::from_vec(vec![0.0]));
        assert_eq!(r(&[1.5]), DVector::from_vec(vec![0.5]));
        assert_eq!(r(&[-2.0, 0.3]), DVector::from_vec(vec![1.0, 0.0]));
    }

    #[test]
    fn dual_update_values() {
        assert_abs_diff_eq!(dual_update(1.0, 1e-2, 1e-4, 0.1, 0.01).unwrap(), 1.46053, epsilon = 1e-5);
        let fixed = 1e-4 * (1.0 - 0.01);
        assert_abs_diff_eq!(dual_update(2.5, fixed, 1e-4, 0.1, 0.01).unwrap(), 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(dual_update(1.0, 0.0, 1e-4, 0.1, 0.01).unwrap(), 0.53948, epsilon = 1e-5);
        assert!(dual_update(1.0, -1.0, 1e-4, 0.1, 0.01).is_err());
        assert_eq!(dual_update(1e12, 1e6, 1e-4, 0.1, 0.01).unwrap(), d::LAMBDA_MAX);
    }

    #[test]
    fn dynamics_residual_examples() {
        let m = crate::dynamics::LinearGaussianDynamics::shift(1, 0.1);
        let v = |x: f64| DVector::from_vec(vec![x]);
        assert_eq!(dynamics_residual(&m, &v(0.0), &v(1.0), &v(1.0)).unwrap(), v(0.0));
        assert_eq!(dynamics_residual(&m, &v(0.0), &v(1.0), &v(1.5)).unwrap(), v(0.5));
    }

    fn outcome(ret: f64, viol: f64) -> PlanOutcome {
        PlanOutcome {
            actions: vec![],
            states: vec![],
            planned_return: ret,
            max_violation: viol,
            diagnostics: PlanDiagnostics::default(),
        }
    }

    #[test]
    fn restart_selection_rules() {
        let best = select_best_restart(vec![outcome(100.0, 1.0), outcome(0.1, 0.0)], 1e-4).unwrap();
        assert_eq!(best.planned_return, 0.1);
        let best = select_best_restart(vec![outcome(1.0, 0.0), outcome(2.0, 0.0)], 1e-4).unwrap();
        assert_eq!(best.planned_return, 2.0);
        let best = select_best_restart(vec![outcome(5.0, 0.5), outcome(1.0, 0.01)], 1e-4).unwrap();
        assert_eq!(best.max_violation, 0.01);
        assert!(select_best_restart(vec![], 1e-4).is_err());
    }

    #[test]
    fn config_json_defaults_and_ablation_forms() {
        let c: LatcoConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, LatcoConfig::default());
        let c: LatcoConfig = serde_json::from_str(r#"{"ablation":"no_relaxation"}"#).unwrap();
        assert_eq!(c.ablation, Ablation::NoRelaxation);
        let c: LatcoConfig =
            serde_json::from_str(r#"{"ablation":{"fixed_multipliers":{"lambda_dyn":8,"lambda_act":16}}}"#).unwrap();
        assert_eq!(c.ablation, Ablation::fixed_multipliers());
        assert!(serde_json::from_str::<LatcoConfig>(r#"{"iters":3}"#).is_err());
        let bad = LatcoConfig {
            damping: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

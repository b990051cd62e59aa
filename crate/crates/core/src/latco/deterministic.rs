use rand::RngCore;

use super::plan::{build_system, init_plan, plan_violations, zero_plan, DeterministicPlan};
use super::{action_residual, dual_update, Ablation, LatcoConfig, Multipliers, PlanInit};
use crate::btlm::{gradient, solve_system};
use crate::defaults as d;
use crate::error::{Error, Result};
use crate::planner::{IterationRecord, PlanDiagnostics, PlanOutcome, PlanProblem, Planner};

#[derive(Debug, Clone, PartialEq)]
pub struct LatcoResult {
    pub plan: DeterministicPlan,
    pub multipliers: Multipliers,
    pub diagnostics: PlanDiagnostics,
    /// `Σ_t r(z_{t+1}) − c‖a_t‖²` over the planned states.
    pub planned_return: f64,
    pub max_violation: f64,
    pub max_action_violation: f64,
}

impl LatcoResult {
    pub fn into_outcome(self, problem: &PlanProblem<'_>) -> PlanOutcome {
        PlanOutcome {
            actions: self.plan.actions.iter().map(|a| problem.clamp(a)).collect(),
            states: self.plan.states,
            planned_return: self.planned_return,
            max_violation: self.max_violation,
            diagnostics: self.diagnostics,
        }
    }
}

struct Evaluation {
    reward_sum: f64,
    dyn_viol: Vec<f64>,
    act_viol: Vec<f64>,
}

fn evaluate(plan: &DeterministicPlan, problem: &PlanProblem<'_>) -> Result<Evaluation> {
    let reward_sum = plan
        .states
        .iter()
        .zip(&plan.actions)
        .map(|(z, a)| problem.step_reward(z, a))
        .sum();
    Ok(Evaluation {
        reward_sum,
        dyn_viol: plan_violations(plan, problem.dynamics)?,
        act_viol: plan
            .actions
            .iter()
            .map(|a| action_residual(a, problem.action_bound).norm_squared())
            .collect(),
    })
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn record(iteration: usize, ev: &Evaluation, lam: &Multipliers) -> IterationRecord {
    IterationRecord {
        iteration,
        reward_sum: ev.reward_sum,
        max_violation: max_of(&ev.dyn_viol),
        mean_lambda_dyn: lam.mean_dynamics(),
        mean_lambda_act: lam.mean_action(),
    }
}

fn initial_plan(problem: &PlanProblem<'_>, cfg: &LatcoConfig, rng: &mut dyn RngCore) -> Result<DeterministicPlan> {
    match cfg.init {
        PlanInit::Rollout => init_plan(problem.dynamics, problem.start, problem.horizon, rng, problem.action_bound),
        PlanInit::Zero => zero_plan(problem.dynamics, problem.start, problem.horizon),
    }
}

/// Deterministic collocation: `K` fixed-damping LM steps on the Lagrangian
/// residuals, each followed (every `dual_period` steps) by a multiplicative
/// dual update on the post-step violations.
pub fn latco_deterministic(problem: &PlanProblem<'_>, cfg: &LatcoConfig, rng: &mut dyn RngCore) -> Result<LatcoResult> {
    problem.validate()?;
    cfg.validate()?;
    let mut plan = initial_plan(problem, cfg, rng)?;
    let mut lam = cfg.initial_multipliers(problem.horizon);
    if let Ablation::FirstOrder {
        steps,
        dual_period,
        dual_lr,
        primal_lr,
    } = cfg.ablation
    {
        return first_order(problem, cfg, plan, lam, steps, dual_period, dual_lr, primal_lr);
    }
    let adapt = !matches!(cfg.ablation, Ablation::FixedMultipliers { .. });

    let mut diagnostics = PlanDiagnostics::default();
    let mut vars = plan.to_vars();
    let mut ev = evaluate(&plan, problem)?;
    for k in 0..cfg.iterations {
        let step = build_system(&plan, &lam, problem)
            .and_then(|sys| solve_system(&sys, cfg.damping))
            .map_err(|e| e.at_iteration(k))?;
        vars -= step;
        plan.set_vars(&vars);
        if !plan.is_finite() {
            return Err(Error::NonFinite("plan").at_iteration(k));
        }
        ev = evaluate(&plan, problem).map_err(|e| e.at_iteration(k))?;
        if adapt && (k + 1) % cfg.dual_period == 0 {
            for t in 0..problem.horizon {
                lam.dynamics[t] = dual_update(lam.dynamics[t], ev.dyn_viol[t], cfg.eps_dyn, cfg.dual_step, cfg.dual_stabilizer)?;
                lam.action[t] = dual_update(lam.action[t], ev.act_viol[t], cfg.eps_act, cfg.dual_step, cfg.dual_stabilizer)?;
            }
        }
        diagnostics.push(record(k, &ev, &lam));
    }
    Ok(LatcoResult {
        planned_return: ev.reward_sum,
        max_violation: max_of(&ev.dyn_viol),
        max_action_violation: max_of(&ev.act_viol),
        plan,
        multipliers: lam,
        diagnostics,
    })
}

/// Gradient descent on `Σρ²` with the additive dual step
/// `λ ← λ + lr_dual·(v − ε)` every `dual_period` steps.
#[allow(clippy::too_many_arguments)]
fn first_order(
    problem: &PlanProblem<'_>,
    cfg: &LatcoConfig,
    mut plan: DeterministicPlan,
    mut lam: Multipliers,
    steps: usize,
    dual_period: usize,
    dual_lr: f64,
    primal_lr: f64,
) -> Result<LatcoResult> {
    let mut diagnostics = PlanDiagnostics::default();
    let mut vars = plan.to_vars();
    let mut ev = evaluate(&plan, problem)?;
    for k in 0..steps {
        let g = build_system(&plan, &lam, problem)
            .and_then(|sys| gradient(&sys))
            .map_err(|e| e.at_iteration(k))?;
        vars.axpy(-2.0 * primal_lr, &g, 1.0);
        plan.set_vars(&vars);
        if !plan.is_finite() {
            return Err(Error::NonFinite("plan").at_iteration(k));
        }
        ev = evaluate(&plan, problem).map_err(|e| e.at_iteration(k))?;
        if (k + 1) % dual_period == 0 {
            for t in 0..problem.horizon {
                lam.dynamics[t] =
                    (lam.dynamics[t] + dual_lr * (ev.dyn_viol[t] - cfg.eps_dyn)).clamp(d::LAMBDA_MIN, d::LAMBDA_MAX);
                lam.action[t] =
                    (lam.action[t] + dual_lr * (ev.act_viol[t] - cfg.eps_act)).clamp(d::LAMBDA_MIN, d::LAMBDA_MAX);
            }
        }
        diagnostics.push(record(k, &ev, &lam));
    }
    Ok(LatcoResult {
        planned_return: ev.reward_sum,
        max_violation: max_of(&ev.dyn_viol),
        max_action_violation: max_of(&ev.act_viol),
        plan,
        multipliers: lam,
        diagnostics,
    })
}

#[derive(Debug, Clone, Default)]
pub struct LatcoPlanner {
    pub config: LatcoConfig,
}

impl LatcoPlanner {
    pub fn new(config: LatcoConfig) -> Self {
        Self { config }
    }
}

impl Planner for LatcoPlanner {
    fn name(&self) -> &'static str {
        "latco"
    }

    fn plan(&self, problem: &PlanProblem<'_>, rng: &mut dyn RngCore) -> Result<PlanOutcome> {
        Ok(latco_deterministic(problem, &self.config, rng)?.into_outcome(problem))
    }

    fn restarts(&self) -> usize {
        self.config.restarts
    }

    fn feasibility_tolerance(&self) -> f64 {
        self.config.eps_dyn
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ConstantReward, LinearGaussianDynamics, QuadraticReward};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_reward_plan_is_feasible_and_bounded() {
        let m = LinearGaussianDynamics::shift(2, 0.0);
        let r = ConstantReward { dim: 2, value: 0.0 };
        let z1 = DVector::from_vec(vec![0.2, -0.4]);
        let problem = PlanProblem::new(&m, &r, &z1, 8, 0.3);
        let res = latco_deterministic(&problem, &LatcoConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(res.max_violation <= 1e-4);
        assert!(res.plan.actions.iter().all(|a| a.amax() <= 0.3 + 1e-3));
        assert_eq!(res.diagnostics.len(), LatcoConfig::default().iterations);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let m = LinearGaussianDynamics::shift(1, 0.0);
        let r = QuadraticReward::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0]));
        let z1 = DVector::from_vec(vec![0.0]);
        let problem = PlanProblem::new(&m, &r, &z1, 5, 0.5);
        let cfg = LatcoConfig {
            iterations: 30,
            ..Default::default()
        };
        let a = latco_deterministic(&problem, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = latco_deterministic(&problem, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_multipliers_stay_fixed() {
        let m = LinearGaussianDynamics::shift(1, 0.0);
        let r = QuadraticReward::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0]));
        let z1 = DVector::from_vec(vec![0.0]);
        let problem = PlanProblem::new(&m, &r, &z1, 4, 0.5);
        let cfg = LatcoConfig {
            iterations: 10,
            ablation: Ablation::fixed_multipliers(),
            ..Default::default()
        };
        let res = latco_deterministic(&problem, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(res.multipliers.dynamics.iter().all(|&l| l == 8.0));
        assert!(res.multipliers.action.iter().all(|&l| l == 16.0));
    }
}

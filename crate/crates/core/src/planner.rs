//! Types shared by every planner: the problem statement, the result, and
//! per-iteration diagnostics.

use std::io::Write;

use rand::RngCore;

use crate::dynamics::{ActionVec, GaussianDynamics, RewardModel, StateVec};
use crate::error::{Error, Result};

/// One planning call: maximize `Σ_t r(z_{t+1}) − c‖a_t‖²` over `horizon`
/// actions from `start`, with `|a_i| ≤ action_bound`.
#[derive(Clone, Copy)]
pub struct PlanProblem<'a> {
    pub dynamics: &'a dyn GaussianDynamics,
    pub reward: &'a dyn RewardModel,
    pub start: &'a StateVec,
    pub horizon: usize,
    pub action_bound: f64,
    pub action_cost: f64,
}

impl<'a> PlanProblem<'a> {
    pub fn new(
        dynamics: &'a dyn GaussianDynamics,
        reward: &'a dyn RewardModel,
        start: &'a StateVec,
        horizon: usize,
        action_bound: f64,
    ) -> Self {
        Self {
            dynamics,
            reward,
            start,
            horizon,
            action_bound,
            action_cost: 0.0,
        }
    }

    pub fn with_action_cost(mut self, cost: f64) -> Self {
        self.action_cost = cost;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.dynamics.action_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("planning horizon must be at least 1".into()));
        }
        if !(self.action_bound > 0.0) || !self.action_bound.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "action bound must be positive, got {}",
                self.action_bound
            )));
        }
        if !(self.action_cost >= 0.0) || !self.action_cost.is_finite() {
            return Err(Error::InvalidArgument("action cost must be nonnegative".into()));
        }
        if self.start.len() != self.state_dim() {
            return Err(Error::Dimension {
                context: "start state",
                expected: self.state_dim(),
                actual: self.start.len(),
            });
        }
        if self.reward.state_dim() != self.state_dim() {
            return Err(Error::Dimension {
                context: "reward model state",
                expected: self.state_dim(),
                actual: self.reward.state_dim(),
            });
        }
        if self.start.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("start state"));
        }
        Ok(())
    }

    /// Per-step reward including the action penalty.
    pub fn step_reward(&self, next: &StateVec, action: &ActionVec) -> f64 {
        self.reward.reward(next) - self.action_cost * action.norm_squared()
    }

    pub fn clamp(&self, a: &ActionVec) -> ActionVec {
        a.map(|v| v.clamp(-self.action_bound, self.action_bound))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub reward_sum: f64,
    pub max_violation: f64,
    pub mean_lambda_dyn: f64,
    pub mean_lambda_act: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanDiagnostics {
    pub records: Vec<IterationRecord>,
}

impl PlanDiagnostics {
    pub fn push(&mut self, rec: IterationRecord) {
        self.records.push(rec);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First iteration after which the violation stays at or below `eps`
    /// through the last record (1-based count of iterations run).
    pub fn iterations_to_feasibility(&self, eps: f64) -> Option<usize> {
        let last_bad = self.records.iter().rposition(|r| r.max_violation > eps);
        match last_bad {
            None => Some(0),
            Some(i) if i + 1 < self.records.len() => Some(self.records[i + 1].iteration + 1),
            Some(_) => None,
        }
    }

    pub const CSV_HEADER: &'static str = "iter,reward_sum,max_violation,mean_lambda_dyn,mean_lambda_act";

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(out, "{}", csv_row(r))?;
        }
        Ok(())
    }
}

pub(crate) fn csv_row(r: &IterationRecord) -> String {
    format!(
        "{},{:e},{:e},{:e},{:e}",
        r.iteration, r.reward_sum, r.max_violation, r.mean_lambda_dyn, r.mean_lambda_act
    )
}

/// Result of one planning call.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    /// Planned actions, clamped to the bound.
    pub actions: Vec<ActionVec>,
    /// Planned states `z_2..z_{H+1}` (plan variables for collocation, the
    /// mean rollout for shooting).
    pub states: Vec<StateVec>,
    /// Objective of the final plan as the planner evaluates it.
    pub planned_return: f64,
    /// Largest squared dynamics violation of the final plan.
    pub max_violation: f64,
    pub diagnostics: PlanDiagnostics,
}

/// A trajectory optimizer over the shared model contracts.
pub trait Planner: Send + Sync {
    fn name(&self) -> &'static str;

    fn plan(&self, problem: &PlanProblem<'_>, rng: &mut dyn RngCore) -> Result<PlanOutcome>;

    /// Independent reinitializations per planning call.
    fn restarts(&self) -> usize {
        1
    }

    /// Violation tolerance used when picking among restarts.
    fn feasibility_tolerance(&self) -> f64 {
        crate::defaults::LATCO_EPS_DYN
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, v: f64) -> IterationRecord {
        IterationRecord {
            iteration: i,
            reward_sum: 0.0,
            max_violation: v,
            mean_lambda_dyn: 1.0,
            mean_lambda_act: 1.0,
        }
    }

    #[test]
    fn feasibility_iteration_counts_stable_satisfaction() {
        let d = PlanDiagnostics {
            records: vec![rec(0, 0.0), rec(1, 1.0), rec(2, 1e-5), rec(3, 1e-6)],
        };
        assert_eq!(d.iterations_to_feasibility(1e-4), Some(3));
        let never = PlanDiagnostics {
            records: vec![rec(0, 1.0), rec(1, 1.0)],
        };
        assert_eq!(never.iterations_to_feasibility(1e-4), None);
        let always = PlanDiagnostics {
            records: vec![rec(0, 0.0)],
        };
        assert_eq!(always.iterations_to_feasibility(1e-4), Some(0));
    }

    #[test]
    fn csv_has_one_row_per_record() {
        let d = PlanDiagnostics {
            records: vec![rec(0, 0.5), rec(1, 0.25)],
        };
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], PlanDiagnostics::CSV_HEADER);
        assert!(lines[2].starts_with("1,"));
    }
}

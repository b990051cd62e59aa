//! Receding-horizon execution, the online model-learning loop, parallel
//! restarts and running reward normalization.

mod train;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defaults as d;
use crate::dynamics::{Episode, GaussianDynamics, RewardModel};
use crate::error::{Error, Result};
use crate::latco::select_best_restart;
use crate::planner::{PlanDiagnostics, PlanOutcome, PlanProblem, Planner};
use crate::worlds::{clamp_action, Env};

pub use train::{online_train, write_curve_csv, CurveRow, ModelSource, TrainLoopConfig, TrainOutcome, CURVE_HEADER};

/// `replan` (T_cache) counts planned actions; each planned action is applied
/// `action_repeat` times, so one planning call covers up to
/// `replan · action_repeat` environment steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub replan: usize,
    /// Environment-step budget of one episode.
    pub episode_steps: usize,
    pub action_repeat: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: d::MPC_HORIZON,
            replan: d::MPC_REPLAN,
            episode_steps: d::MPC_EPISODE_STEPS,
            action_repeat: d::ACTION_REPEAT,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replan == 0 {
            return Err(Error::config("mpc.replan", "must be at least 1"));
        }
        if self.replan > self.horizon {
            return Err(Error::config(
                "mpc.replan",
                format!("replan interval {} exceeds horizon {}", self.replan, self.horizon),
            ));
        }
        if self.horizon > self.episode_steps {
            return Err(Error::config(
                "mpc.horizon",
                format!("horizon {} exceeds episode budget {}", self.horizon, self.episode_steps),
            ));
        }
        if self.action_repeat == 0 {
            return Err(Error::config("mpc.action_repeat", "must be at least 1"));
        }
        Ok(())
    }
}

/// One executed episode together with what the planner reported along it.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcEpisode {
    pub episode: Episode,
    pub invocations: usize,
    /// Final max dynamics violation of every planning call.
    pub plan_violations: Vec<f64>,
    pub plan_diagnostics: Vec<PlanDiagnostics>,
    pub success: bool,
    /// Set when a planning call failed; the episode stops there.
    pub error: Option<String>,
}

impl MpcEpisode {
    pub fn mean_plan_violation(&self) -> f64 {
        if self.plan_violations.is_empty() {
            0.0
        } else {
            self.plan_violations.iter().sum::<f64>() / self.plan_violations.len() as f64
        }
    }
}

/// Runs `restarts` independently seeded planning calls and keeps the best
/// one. Seeds are drawn from `rng` up front, so the selection does not
/// depend on thread scheduling. Failed restarts are dropped.
pub fn plan_with_restarts(
    planner: &dyn Planner,
    problem: &PlanProblem<'_>,
    restarts: usize,
    rng: &mut dyn RngCore,
) -> Result<PlanOutcome> {
    if restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    if restarts == 1 {
        return planner.plan(problem, rng);
    }
    let seeds: Vec<u64> = (0..restarts).map(|_| rng.next_u64()).collect();
    let results: Vec<Result<PlanOutcome>> = seeds
        .par_iter()
        .map(|&s| planner.plan(problem, &mut ChaCha8Rng::seed_from_u64(s)))
        .collect();
    let ok: Vec<PlanOutcome> = results.into_iter().filter_map(|r| r.ok()).collect();
    if ok.is_empty() {
        return Err(Error::AllRestartsFailed(restarts));
    }
    select_best_restart(ok, planner.feasibility_tolerance())
}

/// Plans from the current observation every `replan` planned actions and
/// executes the first `replan` of them, until the environment is done or
/// the step budget is spent. A planning failure ends the episode early and is
/// recorded in [`MpcEpisode::error`].
#[allow(clippy::too_many_arguments)]
pub fn mpc_episode(
    env: &mut dyn Env,
    planner: &dyn Planner,
    dynamics: &dyn GaussianDynamics,
    reward: &dyn RewardModel,
    cfg: &MpcConfig,
    restarts: usize,
    reset_seed: u64,
    rng: &mut dyn RngCore,
) -> Result<MpcEpisode> {
    cfg.validate()?;
    let bound = env.action_bound();
    let start = env.reset(reset_seed);
    let mut out = MpcEpisode {
        episode: Episode::new(start),
        invocations: 0,
        plan_violations: Vec::new(),
        plan_diagnostics: Vec::new(),
        success: false,
        error: None,
    };
    let mut done = false;
    let mut steps = 0;
    while !done && steps < cfg.episode_steps {
        let z = env.state();
        let problem = PlanProblem::new(dynamics, reward, &z, cfg.horizon, bound).with_action_cost(env.action_cost());
        let plan = match plan_with_restarts(planner, &problem, restarts, rng) {
            Ok(p) => p,
            Err(e) => {
                out.error = Some(e.to_string());
                break;
            }
        };
        out.invocations += 1;
        out.plan_violations.push(plan.max_violation);
        'exec: for a in plan.actions.iter().take(cfg.replan) {
            let a = clamp_action(a, bound);
            for _ in 0..cfg.action_repeat {
                if done || steps >= cfg.episode_steps {
                    break 'exec;
                }
                let res = env.step(&a)?;
                out.episode.push(a.clone(), res.reward, res.state);
                steps += 1;
                done = res.done;
            }
        }
        out.plan_diagnostics.push(plan.diagnostics);
    }
    // Dense tasks only end on the time limit.
    out.episode.terminated = done && env.succeeded() && !env.dense_reward();
    out.success = env.succeeded();
    Ok(out)
}

/// Streaming mean and variance (Welford).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunningRewardStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningRewardStats {
    pub fn update(&mut self, r: f64) {
        self.count += 1;
        let delta = r - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (r - self.mean);
    }

    /// Population variance; zero before two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// `(r − mean) / max(std, 1e-6)`, optionally folding `r` into the stats first.
pub fn normalize_reward(stats: &mut RunningRewardStats, r: f64, update: bool) -> f64 {
    if update {
        stats.update(r);
    }
    (r - stats.mean) / stats.std().max(d::REWARD_STD_FLOOR)
}

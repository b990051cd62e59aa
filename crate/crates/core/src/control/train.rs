use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mpc_episode, MpcConfig, MpcEpisode, RunningRewardStats};
use crate::defaults as d;
use crate::dynamics::{Episode, GaussianDynamics, MlpGaussianDynamics, MlpReward, ModelTrainer, ReplayBuffer, RewardModel};
use crate::error::{Error, Result};
use crate::planner::{PlanDiagnostics, Planner};
use crate::worlds::Env;

/// Where the planner's models come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Networks trained online from the replay buffer.
    #[default]
    Learned,
    /// The environment's own ground-truth models; no training.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainLoopConfig {
    pub episodes: usize,
    /// Optimizer steps on each network after every episode.
    pub model_iterations: usize,
    /// Optimizer steps on the seed dataset before the first episode.
    pub pretrain_iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    /// Planner reinitializations per planning call; `None` uses the
    /// planner's own count.
    pub restarts: Option<usize>,
    pub models: ModelSource,
    /// Fill the `wall_ms` column. Off by default so that the learning curve
    /// is a pure function of config and seed.
    pub record_wall_time: bool,
}

impl Default for TrainLoopConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            model_iterations: d::MODEL_ITERATIONS_PER_EPISODE,
            pretrain_iterations: 0,
            batch_size: d::MODEL_BATCH,
            learning_rate: d::MODEL_LEARNING_RATE,
            replay_capacity: d::REPLAY_CAPACITY,
            restarts: None,
            models: ModelSource::Learned,
            record_wall_time: false,
        }
    }
}

impl TrainLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.replay_capacity == 0 {
            return Err(Error::config("train.replay_capacity", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.restarts == Some(0) {
            return Err(Error::config("train.restarts", "must be at least 1"));
        }
        Ok(())
    }
}

/// One learning-curve row.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    /// Cumulative environment steps including this episode.
    pub env_steps: usize,
    pub ret: f64,
    pub success: bool,
    /// Mean final dynamics violation over the episode's planning calls.
    pub plan_violation: f64,
    pub wall_ms: u64,
}

pub const CURVE_HEADER: &str = "episode,env_steps,return,success,plan_violation,wall_ms";

pub fn write_curve_csv<W: Write>(mut out: W, rows: &[CurveRow]) -> Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:e},{},{:e},{}",
            r.episode, r.env_steps, r.ret, r.success as u8, r.plan_violation, r.wall_ms
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<CurveRow>,
    /// Executed episodes, raw rewards.
    pub episodes: Vec<Episode>,
    /// Planner diagnostics, one list per episode.
    pub plan_diagnostics: Vec<Vec<PlanDiagnostics>>,
    /// Final networks when models are learned.
    pub models: Option<(MlpGaussianDynamics, MlpReward)>,
}

struct Learned {
    dynamics: MlpGaussianDynamics,
    reward: MlpReward,
    trainer: ModelTrainer,
}

impl Learned {
    fn train(&mut self, buffer: &ReplayBuffer, steps: usize, stats: Option<&RunningRewardStats>, rng: &mut ChaCha8Rng) -> Result<()> {
        if steps == 0 || buffer.is_empty() {
            return Ok(());
        }
        self.trainer.train_dynamics(buffer, &mut self.dynamics, steps, rng)?;
        match stats {
            Some(s) => {
                let (mean, std) = (s.mean, s.std().max(d::REWARD_STD_FLOOR));
                self.trainer
                    .train_reward(buffer, &mut self.reward, steps, rng, &move |r| (r - mean) / std)?;
            }
            None => {
                self.trainer.train_reward(buffer, &mut self.reward, steps, rng, &|r| r)?;
            }
        }
        Ok(())
    }
}

/// Collect an episode with MPC, add it to the buffer, train the models, repeat.
///
/// The buffer starts with `seed_data`. Rewards are stored raw; on dense tasks
/// the reward network regresses rewards normalized by running statistics of
/// every reward observed so far. With [`ModelSource::Oracle`] nothing is
/// trained and the environment's models are used directly.
pub fn online_train(
    env: &mut dyn Env,
    planner: &dyn Planner,
    mpc: &MpcConfig,
    cfg: &TrainLoopConfig,
    seed: u64,
    seed_data: &[Episode],
) -> Result<TrainOutcome> {
    mpc.validate()?;
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut train_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut plan_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut reset_rng = ChaCha8Rng::seed_from_u64(master.next_u64());

    let (n, m) = (env.state_dim(), env.action_dim());
    let dense = env.dense_reward();
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut stats = RunningRewardStats::default();
    for ep in seed_data {
        if ep.states.first().map(|s| s.len()) != Some(n) || ep.actions.iter().any(|a| a.len() != m) {
            return Err(Error::InvalidArgument("seed episode dimensions do not match the environment".into()));
        }
        if dense {
            ep.rewards.iter().for_each(|&r| stats.update(r));
        }
        buffer.push(ep.clone())?;
    }

    let mut learned = match cfg.models {
        ModelSource::Learned => Some(Learned {
            dynamics: MlpGaussianDynamics::random(n, m, &mut init_rng),
            reward: MlpReward::random(n, &mut init_rng),
            trainer: ModelTrainer::new(cfg.learning_rate, cfg.batch_size),
        }),
        ModelSource::Oracle => None,
    };
    let oracle: Option<(Arc<dyn GaussianDynamics>, Arc<dyn RewardModel>)> = match cfg.models {
        ModelSource::Oracle => Some((env.oracle_dynamics(), env.oracle_reward())),
        ModelSource::Learned => None,
    };
    if let Some(l) = learned.as_mut() {
        l.train(&buffer, cfg.pretrain_iterations, dense.then_some(&stats), &mut train_rng)?;
    }

    let restarts = cfg.restarts.unwrap_or_else(|| planner.restarts());
    let mut out = TrainOutcome {
        curve: Vec::with_capacity(cfg.episodes),
        episodes: Vec::with_capacity(cfg.episodes),
        plan_diagnostics: Vec::with_capacity(cfg.episodes),
        models: None,
    };
    let mut env_steps = 0;
    for e in 0..cfg.episodes {
        let clock = Instant::now();
        let reset_seed = reset_rng.next_u64();
        let ep: MpcEpisode = match (&learned, &oracle) {
            (Some(l), _) => mpc_episode(env, planner, &l.dynamics, &l.reward, mpc, restarts, reset_seed, &mut plan_rng)?,
            (None, Some((dy, rw))) => {
                mpc_episode(env, planner, dy.as_ref(), rw.as_ref(), mpc, restarts, reset_seed, &mut plan_rng)?
            }
            (None, None) => unreachable!("one model source is always set"),
        };
        if let Some(message) = ep.error.clone() {
            return Err(Error::Episode { episode: e, message });
        }
        if dense {
            ep.episode.rewards.iter().for_each(|&r| stats.update(r));
        }
        if !ep.episode.is_empty() {
            buffer.push(ep.episode.clone())?;
        }
        if let Some(l) = learned.as_mut() {
            l.train(&buffer, cfg.model_iterations, dense.then_some(&stats), &mut train_rng)?;
        }
        env_steps += ep.episode.len();
        out.curve.push(CurveRow {
            episode: e,
            env_steps,
            ret: ep.episode.total_reward(),
            success: ep.success,
            plan_violation: ep.mean_plan_violation(),
            wall_ms: if cfg.record_wall_time {
                clock.elapsed().as_millis() as u64
            } else {
                0
            },
        });
        out.plan_diagnostics.push(ep.plan_diagnostics);
        out.episodes.push(ep.episode);
    }
    out.models = learned.map(|l| (l.dynamics, l.reward));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shooting::{CemConfig, CemPlanner};
    use crate::worlds::{PointMassEnv, PointMassParams};

    fn small_cem() -> CemPlanner {
        CemPlanner {
            config: CemConfig {
                population: 30,
                elites: 3,
                iterations: 2,
                ..Default::default()
            },
        }
    }

    fn short_mpc() -> MpcConfig {
        MpcConfig {
            horizon: 5,
            replan: 5,
            episode_steps: 10,
            action_repeat: 1,
        }
    }

    #[test]
    fn zero_episodes_leave_models_untouched() {
        let mut env = PointMassEnv::new(PointMassParams::default());
        let cfg = TrainLoopConfig {
            episodes: 0,
            record_wall_time: false,
            ..Default::default()
        };
        let out = online_train(&mut env, &small_cem(), &short_mpc(), &cfg, 3, &[]).unwrap();
        assert!(out.curve.is_empty());
        let (dy, rw) = out.models.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut init = ChaCha8Rng::seed_from_u64(rng.next_u64());
        assert_eq!(dy, MlpGaussianDynamics::random(2, 2, &mut init));
        assert_eq!(rw, MlpReward::random(2, &mut init));
    }

    #[test]
    fn curve_is_reproducible() {
        let cfg = TrainLoopConfig {
            episodes: 3,
            model_iterations: 2,
            batch_size: 8,
            record_wall_time: false,
            ..Default::default()
        };
        let run = || {
            let mut env = PointMassEnv::new(PointMassParams::default());
            let out = online_train(&mut env, &small_cem(), &short_mpc(), &cfg, 11, &[]).unwrap();
            let mut buf = Vec::new();
            write_curve_csv(&mut buf, &out.curve).unwrap();
            buf
        };
        let a = run();
        assert_eq!(a, run());
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with(CURVE_HEADER));
    }

    #[test]
    fn oracle_models_skip_training() {
        let mut env = PointMassEnv::new(PointMassParams {
            d: 0.3,
            ..Default::default()
        });
        let cfg = TrainLoopConfig {
            episodes: 2,
            models: ModelSource::Oracle,
            record_wall_time: false,
            ..Default::default()
        };
        let out = online_train(&mut env, &small_cem(), &short_mpc(), &cfg, 0, &[]).unwrap();
        assert!(out.models.is_none());
        assert_eq!(out.curve.len(), 2);
        assert!(out.curve.iter().all(|r| r.env_steps <= 20));
        assert_eq!(out.curve[1].env_steps, out.episodes[0].len() + out.episodes[1].len());
    }

    #[test]
    fn mismatched_seed_data_is_rejected() {
        let mut env = PointMassEnv::new(PointMassParams::default());
        let bad = Episode::new(nalgebra::DVector::zeros(3));
        let err = online_train(&mut env, &small_cem(), &short_mpc(), &TrainLoopConfig::default(), 0, &[bad]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }
}

//! Two-goal task with a risky branch.
//!
//! State `(x, y, o)`. The top goal pays 1. Entering the bottom goal draws the
//! outcome flag `o` (+1 with probability 0.65 paying 20, −1 paying −40), so the
//! randomness lives in the transition and the reward is a function of the
//! state alone. Entering either goal ends the episode.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use super::{check_action, clamp_action, Env, StepResult, ORACLE_STD_FLOOR};
use crate::dynamics::{check_dims, Episode, ActionVec, GaussianDynamics, Linearization, Prediction, RewardModel, StateVec};
use crate::error::{Error, Result};

pub const LOTTERY_WIN_PROB: f64 = 0.65;
pub const TOP_GOAL: [f64; 2] = [0.0, 0.8];
pub const BOTTOM_GOAL: [f64; 2] = [0.0, -0.8];
pub const GOAL_RADIUS: f64 = 0.15;
pub const LOTTERY_ACTION_BOUND: f64 = 0.2;
pub const TOP_REWARD: f64 = 1.0;
pub const WIN_REWARD: f64 = 20.0;
pub const LOSS_REWARD: f64 = -40.0;

/// Width of the smooth goal indicators used by the oracle models.
const REGION_WIDTH: f64 = GOAL_RADIUS;
/// Width of the outcome bumps in the oracle reward.
const OUTCOME_WIDTH: f64 = 0.5;

fn dist2(x: f64, y: f64, goal: [f64; 2]) -> f64 {
    (x - goal[0]).powi(2) + (y - goal[1]).powi(2)
}

fn in_goal(x: f64, y: f64, goal: [f64; 2]) -> bool {
    dist2(x, y, goal) <= GOAL_RADIUS * GOAL_RADIUS
}

#[derive(Debug, Clone)]
pub struct LotteryEnv {
    episode_length: usize,
    x: f64,
    y: f64,
    outcome: f64,
    steps: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl LotteryEnv {
    pub fn new(episode_length: usize) -> Self {
        Self {
            episode_length,
            x: 0.0,
            y: 0.0,
            outcome: 0.0,
            steps: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Moves the agent without touching the outcome draw stream.
    pub fn set_position(&mut self, x: f64, y: f64) {
        self.x = x;
        self.y = y;
        self.outcome = 0.0;
        self.steps = 0;
        self.done = false;
    }

    pub fn outcome(&self) -> f64 {
        self.outcome
    }
}

impl Env for LotteryEnv {
    fn name(&self) -> &'static str {
        "lottery"
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> f64 {
        LOTTERY_ACTION_BOUND
    }

    fn episode_length(&self) -> usize {
        self.episode_length
    }

    /// Starts at the origin, midway between the goals.
    fn reset(&mut self, seed: u64) -> StateVec {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.set_position(0.0, 0.0);
        self.state()
    }

    fn state(&self) -> StateVec {
        DVector::from_vec(vec![self.x, self.y, self.outcome])
    }

    fn step(&mut self, action: &ActionVec) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        check_action(action, 2)?;
        let a = clamp_action(action, LOTTERY_ACTION_BOUND);
        self.x = (self.x + a[0]).clamp(-1.0, 1.0);
        self.y = (self.y + a[1]).clamp(-1.0, 1.0);
        self.steps += 1;
        let mut reward = 0.0;
        if in_goal(self.x, self.y, TOP_GOAL) {
            reward = TOP_REWARD;
            self.done = true;
        } else if in_goal(self.x, self.y, BOTTOM_GOAL) {
            let win = self.rng.random::<f64>() < LOTTERY_WIN_PROB;
            self.outcome = if win { 1.0 } else { -1.0 };
            reward = if win { WIN_REWARD } else { LOSS_REWARD };
            self.done = true;
        }
        if self.steps >= self.episode_length {
            self.done = true;
        }
        Ok(StepResult {
            state: self.state(),
            reward,
            done: self.done,
        })
    }

    fn oracle_dynamics(&self) -> Arc<dyn GaussianDynamics> {
        Arc::new(LotteryDynamics)
    }

    fn oracle_reward(&self) -> Arc<dyn RewardModel> {
        Arc::new(LotteryReward)
    }

    fn dense_reward(&self) -> bool {
        false
    }

    /// A goal was entered.
    fn succeeded(&self) -> bool {
        self.done && (in_goal(self.x, self.y, TOP_GOAL) || in_goal(self.x, self.y, BOTTOM_GOAL))
    }
}

/// Gaussian fit of the lottery transition.
///
/// Position moves exactly as in the environment. The outcome coordinate gets
/// the moment-matched Gaussian of the ±1 draw (mean `2p − 1`, variance
/// `1 − (2p − 1)²`), gated by a smooth indicator of the bottom goal and by
/// `1 − o²` so an outcome that is already drawn stays put.
#[derive(Debug, Clone, Copy)]
pub struct LotteryDynamics;

impl LotteryDynamics {
    pub const OUTCOME_MEAN: f64 = 2.0 * LOTTERY_WIN_PROB - 1.0;

    fn outcome_var() -> f64 {
        1.0 - Self::OUTCOME_MEAN * Self::OUTCOME_MEAN
    }
}

fn gate(x: f64, y: f64) -> (f64, [f64; 2]) {
    let w2 = REGION_WIDTH * REGION_WIDTH;
    let s = (-dist2(x, y, BOTTOM_GOAL) / (2.0 * w2)).exp();
    (s, [-s * (x - BOTTOM_GOAL[0]) / w2, -s * (y - BOTTOM_GOAL[1]) / w2])
}

impl GaussianDynamics for LotteryDynamics {
    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn predict(&self, z: &StateVec, a: &ActionVec) -> Result<Prediction> {
        self.linearize(z, a).map(|l| Prediction { mean: l.mean, std: l.std })
    }

    fn linearize(&self, z: &StateVec, a: &ActionVec) -> Result<Linearization> {
        check_dims(z, a, 3, 2)?;
        let bound = LOTTERY_ACTION_BOUND;
        let mut mean_z = DMatrix::zeros(3, 3);
        let mut mean_a = DMatrix::zeros(3, 2);
        let mut std_z = DMatrix::zeros(3, 3);
        let mut std_a = DMatrix::zeros(3, 2);
        let mut pos = [0.0; 2];
        // dpos'/dpos and dpos'/da are diagonal pass-through masks.
        let mut dpos_dz = [0.0; 2];
        let mut dpos_da = [0.0; 2];
        for i in 0..2 {
            let step = a[i].clamp(-bound, bound);
            let raw = z[i] + step;
            pos[i] = raw.clamp(-1.0, 1.0);
            let inside = if raw.abs() <= 1.0 { 1.0 } else { 0.0 };
            dpos_dz[i] = inside;
            dpos_da[i] = inside * if a[i].abs() <= bound { 1.0 } else { 0.0 };
            mean_z[(i, i)] = dpos_dz[i];
            mean_a[(i, i)] = dpos_da[i];
        }

        let o = z[2];
        let (s, ds) = gate(pos[0], pos[1]);
        let open = 1.0 - o * o;
        let u = s * open;
        let o_mean = o + Self::OUTCOME_MEAN * u;
        let var = Self::outcome_var();
        let floor2 = ORACLE_STD_FLOOR * ORACLE_STD_FLOOR;
        let o_std = (floor2 + var * u * u).sqrt();

        // du/dpos' = ds * open ; du/do = -2 o s
        let du_dpos = [ds[0] * open, ds[1] * open];
        let du_do = -2.0 * o * s;
        let dstd_du = var * u / o_std;
        for i in 0..2 {
            mean_z[(2, i)] = Self::OUTCOME_MEAN * du_dpos[i] * dpos_dz[i];
            mean_a[(2, i)] = Self::OUTCOME_MEAN * du_dpos[i] * dpos_da[i];
            std_z[(2, i)] = dstd_du * du_dpos[i] * dpos_dz[i];
            std_a[(2, i)] = dstd_du * du_dpos[i] * dpos_da[i];
        }
        mean_z[(2, 2)] = 1.0 + Self::OUTCOME_MEAN * du_do;
        std_z[(2, 2)] = dstd_du * du_do;

        Ok(Linearization {
            mean: DVector::from_vec(vec![pos[0], pos[1], o_mean]),
            std: DVector::from_vec(vec![ORACLE_STD_FLOOR, ORACLE_STD_FLOOR, o_std]),
            mean_z,
            mean_a,
            std_z,
            std_a,
        })
    }
}

/// Smooth stand-in for the lottery payout.
///
/// `r = 1·g_top(x, y) + g_bottom(x, y)·(20·b(o − 1) − 40·b(o + 1))` with Gaussian
/// goal indicators `g` and outcome bumps `b`. At the mean outcome of the
/// bottom branch the bracket is strongly positive, while its expectation under
/// the Gaussian outcome fit is negative.
#[derive(Debug, Clone, Copy)]
pub struct LotteryReward;

impl LotteryReward {
    fn parts(z: &StateVec) -> (f64, [f64; 3]) {
        let (x, y, o) = (z[0], z[1], z[2]);
        let w2 = REGION_WIDTH * REGION_WIDTH;
        let top = (-dist2(x, y, TOP_GOAL) / (2.0 * w2)).exp();
        let bot = (-dist2(x, y, BOTTOM_GOAL) / (2.0 * w2)).exp();
        let v2 = OUTCOME_WIDTH * OUTCOME_WIDTH;
        let win = (-(o - 1.0).powi(2) / (2.0 * v2)).exp();
        let loss = (-(o + 1.0).powi(2) / (2.0 * v2)).exp();
        let payout = WIN_REWARD * win + LOSS_REWARD * loss;
        let dpayout = WIN_REWARD * win * (-(o - 1.0) / v2) + LOSS_REWARD * loss * (-(o + 1.0) / v2);
        let r = TOP_REWARD * top + bot * payout;
        let gx = TOP_REWARD * top * (-(x - TOP_GOAL[0]) / w2) + bot * payout * (-(x - BOTTOM_GOAL[0]) / w2);
        let gy = TOP_REWARD * top * (-(y - TOP_GOAL[1]) / w2) + bot * payout * (-(y - BOTTOM_GOAL[1]) / w2);
        (r, [gx, gy, bot * dpayout])
    }
}

impl RewardModel for LotteryReward {
    fn state_dim(&self) -> usize {
        3
    }

    fn reward(&self, z: &StateVec) -> f64 {
        Self::parts(z).0
    }

    fn gradient(&self, z: &StateVec) -> StateVec {
        let g = Self::parts(z).1;
        DVector::from_vec(g.to_vec())
    }
}

/// Scripted episodes that head straight for a goal, alternating top and
/// bottom so both goals appear in equal proportion.
///
/// Each step moves toward the goal at full speed plus Gaussian jitter of
/// std `0.3·a_m` per coordinate.
pub fn reaching_episodes(episodes: usize, episode_length: usize, seed: u64) -> Result<Vec<Episode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = rand_distr::Normal::new(0.0, 0.3 * LOTTERY_ACTION_BOUND).expect("positive std");
    let mut env = LotteryEnv::new(episode_length);
    let mut out = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let goal = if i % 2 == 0 { TOP_GOAL } else { BOTTOM_GOAL };
        let mut ep = Episode::new(env.reset(rng.random()));
        loop {
            let s = env.state();
            let dir = DVector::from_vec(vec![goal[0] - s[0], goal[1] - s[1]]);
            let n = dir.norm().max(1e-12);
            let a = dir.map(|v| v / n * LOTTERY_ACTION_BOUND + jitter.sample(&mut rng));
            let a = clamp_action(&a, LOTTERY_ACTION_BOUND);
            let step = env.step(&a)?;
            ep.push(a, step.reward, step.state);
            if step.done {
                ep.terminated = env.succeeded();
                break;
            }
        }
        out.push(ep);
    }
    Ok(out)
}

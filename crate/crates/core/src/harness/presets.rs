use std::path::PathBuf;

use serde_json::json;

use super::{ExperimentConfig, PlannerName, SeedData};
use crate::control::{MpcConfig, ModelSource};
use crate::defaults as d;
use crate::error::{Error, Result};
use crate::latco::Ablation;
use crate::worlds::{EnvDescriptor, LotteryParams, LqParams, PointMassParams};

pub const PRESET_NAMES: [&str; 5] = ["lottery", "parametric", "ablations", "lqr_check", "bench_solver"];

/// Goal distances of the difficulty sweep.
pub const PARAMETRIC_DISTANCES: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

/// Episodes per run for the oracle-model studies; each episode is one
/// seeded attempt.
pub const ORACLE_STUDY_EPISODES: usize = 20;

/// Damping used by collocation on the LQ task and the small grid task. The
/// library default of 1e-3 oscillates when reward residuals are far from
/// zero.
pub const BENCHMARK_DAMPING: f64 = 1.0;

/// Collocation damping on the point-mass studies. Small enough that the plan
/// can move into the reward region within the iteration budget.
pub const POINTMASS_DAMPING: f64 = 0.3;

/// Sparse point-mass task used by the ablation study.
pub fn long_horizon_task() -> PointMassParams {
    PointMassParams {
        d: 2.0,
        sparse: true,
        noise_std: 0.0,
        episode_length: 100,
        reward_width: 0.5,
    }
}

pub fn pointmass_mpc() -> MpcConfig {
    MpcConfig {
        horizon: 30,
        replan: 30,
        episode_steps: 100,
        action_repeat: 1,
    }
}

pub fn lottery_mpc() -> MpcConfig {
    MpcConfig {
        horizon: 10,
        replan: 5,
        episode_steps: 30,
        action_repeat: 1,
    }
}

/// Planner overrides for the linear-quadratic comparison.
pub fn lq_overrides(planner: PlannerName) -> serde_json::Value {
    match planner {
        PlannerName::Latco => json!({"damping": BENCHMARK_DAMPING, "eps_dyn": 1e-7}),
        PlannerName::ShootingGn => json!({"damping": 20.0, "iterations": 2000}),
        _ => json!({}),
    }
}

fn labelled(study: &str, label: String, mut cfg: ExperimentConfig) -> (String, ExperimentConfig) {
    cfg.out_dir = PathBuf::from("runs").join(study).join(&label);
    (label, cfg)
}

fn oracle_run(env: EnvDescriptor, planner: PlannerName) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(env, planner);
    cfg.mpc = pointmass_mpc();
    cfg.train.models = ModelSource::Oracle;
    cfg.train.episodes = ORACLE_STUDY_EPISODES;
    if planner == PlannerName::Latco {
        cfg.planner_config = json!({"damping": POINTMASS_DAMPING});
    }
    cfg
}

fn lottery() -> Vec<(String, ExperimentConfig)> {
    [PlannerName::LatcoGaussian, PlannerName::Latco, PlannerName::Cem, PlannerName::ShootingGd]
        .into_iter()
        .map(|p| {
            let mut cfg = ExperimentConfig::new(EnvDescriptor::Lottery(LotteryParams::default()), p);
            cfg.mpc = lottery_mpc();
            cfg.seed_data = SeedData::Reaching {
                episodes: d::SEED_EPISODES,
            };
            cfg.train.pretrain_iterations = 2000;
            if p == PlannerName::Cem {
                cfg.planner_config = json!({"mode": "sampled"});
            }
            labelled("lottery", p.as_str().to_string(), cfg)
        })
        .collect()
}

fn parametric() -> Vec<(String, ExperimentConfig)> {
    let mut out = Vec::new();
    for d in PARAMETRIC_DISTANCES {
        for p in [PlannerName::Latco, PlannerName::Cem, PlannerName::ShootingGd] {
            let env = EnvDescriptor::Pointmass(PointMassParams {
                d,
                ..PointMassParams::default()
            });
            out.push(labelled("parametric", format!("d{d:.1}_{}", p.as_str()), oracle_run(env, p)));
        }
    }
    out
}

fn ablations() -> Vec<(String, ExperimentConfig)> {
    [
        ("default", Ablation::None),
        ("no_relaxation", Ablation::no_relaxation()),
        ("fixed_multipliers", Ablation::fixed_multipliers()),
        ("first_order", Ablation::first_order()),
    ]
    .into_iter()
    .map(|(label, ablation)| {
        let mut cfg = oracle_run(EnvDescriptor::Pointmass(long_horizon_task()), PlannerName::Latco);
        cfg.ablation = ablation;
        labelled("ablations", label.to_string(), cfg)
    })
    .collect()
}

fn lqr_check() -> Vec<(String, ExperimentConfig)> {
    let lq = LqParams::default();
    [PlannerName::Latco, PlannerName::ShootingGd, PlannerName::ShootingGn, PlannerName::Ilqr]
        .into_iter()
        .map(|p| {
            let mut cfg = ExperimentConfig::new(EnvDescriptor::Lq(lq.clone()), p);
            cfg.mpc = MpcConfig {
                horizon: lq.episode_length,
                replan: lq.episode_length,
                episode_steps: lq.episode_length,
                action_repeat: 1,
            };
            cfg.planner_config = lq_overrides(p);
            cfg.train.restarts = Some(1);
            labelled("lqr_check", p.as_str().to_string(), cfg)
        })
        .collect()
}

fn bench_solver() -> Vec<(String, ExperimentConfig)> {
    let cfg = ExperimentConfig::new(EnvDescriptor::Lq(LqParams::default()), PlannerName::Latco);
    vec![labelled("bench_solver", "block_vs_dense".to_string(), cfg)]
}

/// Resolved configs for a named study, with run labels. Each config writes
/// to `runs/<study>/<label>`.
pub fn preset(name: &str) -> Result<Vec<(String, ExperimentConfig)>> {
    let raw = match name {
        "lottery" => lottery(),
        "parametric" => parametric(),
        "ablations" => ablations(),
        "lqr_check" => lqr_check(),
        "bench_solver" => bench_solver(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown preset `{other}`; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    raw.into_iter().map(|(label, cfg)| Ok((label, cfg.resolve()?))).collect()
}

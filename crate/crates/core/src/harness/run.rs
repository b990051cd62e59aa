use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, SeedData};
use crate::btlm::{solver_benchmark, write_benchmark_csv, SolverKind};
use crate::control::{online_train, plan_with_restarts, write_curve_csv};
use crate::dynamics::{write_checkpoint, Episode};
use crate::error::{Error, Result};
use crate::planner::{csv_row, PlanDiagnostics, PlanProblem};
use crate::worlds::{make_env, reaching_episodes, read_trace_csv, EnvDescriptor};

pub const MANIFEST_FILE: &str = "manifest.json";
const CURVE_FILE: &str = "learning_curve.csv";
const DIAGNOSTICS_FILE: &str = "plan_diagnostics.csv";
const CHECKPOINT_FILE: &str = "model.ckpt";
const PLAN_FILE: &str = "plan.csv";
const BENCH_FILE: &str = "solver_benchmark.csv";

/// Offset separating the seed-dataset stream from the training streams.
const SEED_DATA_STREAM: u64 = 0x5eed_da7a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// One planning call from the environment's reset state with its oracle
    /// models.
    Plan,
    /// Online model learning with MPC.
    Train,
    /// Block vs dense LM solve timing.
    BenchSolver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub version: String,
    pub seed: u64,
    pub started: String,
    pub finished: Option<String>,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Result files in the output directory, in write order.
    pub files: Vec<String>,
    pub summary: BTreeMap<String, f64>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| Error::config(MANIFEST_FILE, e.to_string()))
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes to JSON");
        fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Results {
    files: Vec<(&'static str, Vec<u8>)>,
    summary: BTreeMap<String, f64>,
}

/// Runs one experiment and persists its results under `cfg.out_dir`.
///
/// The manifest is written before anything else and rewritten at the end
/// with the outcome. Results are computed in memory first, so a failed run
/// leaves only the manifest, with its error recorded. An invalid config or
/// an unwritable output directory fails before anything is written.
pub fn run_experiment(cfg: &ExperimentConfig, command: Command) -> Result<RunManifest> {
    let cfg = cfg.clone().resolve()?;
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        started: now(),
        finished: None,
        status: RunStatus::Running,
        error: None,
        files: Vec::new(),
        summary: BTreeMap::new(),
        config: cfg.clone(),
    };
    manifest.write(&dir)?;

    let outcome = execute(&cfg, command).and_then(|res| {
        for (name, bytes) in &res.files {
            fs::write(dir.join(name), bytes)?;
            manifest.files.push(name.to_string());
        }
        Ok(res.summary)
    });
    manifest.finished = Some(now());
    match outcome {
        Ok(summary) => {
            manifest.summary = summary;
            manifest.status = RunStatus::Ok;
            manifest.write(&dir)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            manifest.write(&dir)?;
            Err(e)
        }
    }
}

fn execute(cfg: &ExperimentConfig, command: Command) -> Result<Results> {
    match command {
        Command::Plan => plan(cfg),
        Command::Train => train(cfg),
        Command::BenchSolver => bench(cfg),
    }
}

fn seed_episodes(cfg: &ExperimentConfig) -> Result<Vec<Episode>> {
    match &cfg.seed_data {
        SeedData::None => Ok(Vec::new()),
        SeedData::Reaching { episodes } => {
            let len = match &cfg.env {
                EnvDescriptor::Lottery(p) => p.episode_length,
                _ => unreachable!("checked by resolve"),
            };
            reaching_episodes(*episodes, len, cfg.seed ^ SEED_DATA_STREAM)
        }
        SeedData::File(path) => read_trace_csv(fs::File::open(path)?),
    }
}

fn train(cfg: &ExperimentConfig) -> Result<Results> {
    let mut env = make_env(&cfg.env)?;
    let planner = cfg.build_planner()?;
    let seed_data = seed_episodes(cfg)?;
    let out = online_train(env.as_mut(), planner.as_ref(), &cfg.mpc, &cfg.train, cfg.seed, &seed_data)?;

    let mut curve = Vec::new();
    write_curve_csv(&mut curve, &out.curve)?;
    let mut diag = format!("episode,call,{}\n", PlanDiagnostics::CSV_HEADER);
    for (e, calls) in out.plan_diagnostics.iter().enumerate() {
        for (c, d) in calls.iter().enumerate() {
            for r in &d.records {
                diag.push_str(&format!("{e},{c},{}\n", csv_row(r)));
            }
        }
    }
    let mut files = vec![(CURVE_FILE, curve), (DIAGNOSTICS_FILE, diag.into_bytes())];
    if let Some((dy, rw)) = &out.models {
        let mut ckpt = Vec::new();
        write_checkpoint(&mut ckpt, dy, rw)?;
        files.push((CHECKPOINT_FILE, ckpt));
    }

    let n = out.curve.len();
    let tail = &out.curve[n.saturating_sub(10)..];
    let mut summary = BTreeMap::new();
    summary.insert("episodes".into(), n as f64);
    summary.insert("env_steps".into(), out.curve.last().map_or(0, |r| r.env_steps) as f64);
    if !tail.is_empty() {
        let k = tail.len() as f64;
        summary.insert("final_mean_return".into(), tail.iter().map(|r| r.ret).sum::<f64>() / k);
        summary.insert("final_success_rate".into(), tail.iter().filter(|r| r.success).count() as f64 / k);
    }
    Ok(Results { files, summary })
}

fn plan(cfg: &ExperimentConfig) -> Result<Results> {
    let mut env = make_env(&cfg.env)?;
    let planner = cfg.build_planner()?;
    let start = env.reset(cfg.seed);
    let (dynamics, reward) = (env.oracle_dynamics(), env.oracle_reward());
    let problem = PlanProblem::new(
        dynamics.as_ref(),
        reward.as_ref(),
        &start,
        cfg.mpc.horizon,
        env.action_bound(),
    )
    .with_action_cost(env.action_cost());
    let restarts = cfg.train.restarts.unwrap_or_else(|| planner.restarts());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = plan_with_restarts(planner.as_ref(), &problem, restarts, &mut rng)?;

    let mut diag = Vec::new();
    out.diagnostics.write_csv(&mut diag)?;
    let (m, n) = (env.action_dim(), env.state_dim());
    let mut header = vec!["t".to_string()];
    header.extend((0..m).map(|i| format!("a{i}")));
    header.extend((0..n).map(|i| format!("z{i}")));
    let mut table = header.join(",") + "\n";
    for (t, (a, z)) in out.actions.iter().zip(&out.states).enumerate() {
        let cells: Vec<String> = a.iter().chain(z.iter()).map(|v| format!("{v:e}")).collect();
        table.push_str(&format!("{t},{}\n", cells.join(",")));
    }

    let mut summary = BTreeMap::new();
    summary.insert("planned_return".into(), out.planned_return);
    summary.insert("max_violation".into(), out.max_violation);
    summary.insert("iterations".into(), out.diagnostics.len() as f64);
    Ok(Results {
        files: vec![(DIAGNOSTICS_FILE, diag), (PLAN_FILE, table.into_bytes())],
        summary,
    })
}

fn bench(cfg: &ExperimentConfig) -> Result<Results> {
    let b = &cfg.bench;
    let rows = solver_benchmark(&b.horizons, b.block_size, &[SolverKind::Block, SolverKind::Dense], b.repeats)?;
    let mut csv = Vec::new();
    write_benchmark_csv(&mut csv, &rows)?;
    let mut summary = BTreeMap::new();
    for kind in [SolverKind::Block, SolverKind::Dense] {
        let times: Vec<f64> = rows.iter().filter(|r| r.solver == kind).map(|r| r.wall_ms).collect();
        if let (Some(first), Some(last)) = (times.first(), times.last()) {
            summary.insert(format!("{kind}_time_ratio"), last / first.max(1e-9));
        }
    }
    Ok(Results {
        files: vec![(BENCH_FILE, csv)],
        summary,
    })
}

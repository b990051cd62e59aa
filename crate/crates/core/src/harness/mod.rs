//! Experiment configuration, presets and result persistence.
//!
//! A run is described by one JSON object. Keys mirror [`ExperimentConfig`];
//! every key except `env` and `planner` may be omitted and falls back to the
//! defaults table. Unknown keys are rejected with the path of the offending
//! key.

mod presets;
mod run;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::control::{MpcConfig, TrainLoopConfig};
use crate::error::{Error, Result};
use crate::latco::{Ablation, GaussianLatcoConfig, GaussianLatcoPlanner, LatcoConfig, LatcoPlanner};
use crate::planner::Planner;
use crate::shooting::{
    CemConfig, CemPlanner, GdConfig, GdPlanner, GnConfig, GnPlanner, IlqrConfig, IlqrPlanner, MppiConfig,
    MppiPlanner,
};
use crate::worlds::EnvDescriptor;

pub use presets::{
    long_horizon_task, lottery_mpc, lq_overrides, pointmass_mpc, preset, BENCHMARK_DAMPING, ORACLE_STUDY_EPISODES,
    PARAMETRIC_DISTANCES, POINTMASS_DAMPING, PRESET_NAMES,
};
pub use run::{run_experiment, Command, RunManifest, RunStatus, MANIFEST_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerName {
    Latco,
    LatcoGaussian,
    Cem,
    Mppi,
    ShootingGd,
    ShootingGn,
    Ilqr,
}

impl std::str::FromStr for PlannerName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlannerName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::config("planner", format!("unknown planner `{s}`")))
    }
}

impl PlannerName {
    pub const ALL: [PlannerName; 7] = [
        PlannerName::Latco,
        PlannerName::LatcoGaussian,
        PlannerName::Cem,
        PlannerName::Mppi,
        PlannerName::ShootingGd,
        PlannerName::ShootingGn,
        PlannerName::Ilqr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlannerName::Latco => "latco",
            PlannerName::LatcoGaussian => "latco_gaussian",
            PlannerName::Cem => "cem",
            PlannerName::Mppi => "mppi",
            PlannerName::ShootingGd => "shooting_gd",
            PlannerName::ShootingGn => "shooting_gn",
            PlannerName::Ilqr => "ilqr",
        }
    }
}

/// Episodes placed in the replay buffer before online training.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedData {
    #[default]
    None,
    /// Scripted lottery episodes, half to each goal.
    Reaching { episodes: usize },
    /// Episode trace CSV as written by `write_trace_csv`.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub horizons: Vec<usize>,
    pub block_size: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            horizons: vec![20, 40, 80, 160],
            block_size: 12,
            repeats: 3,
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvDescriptor,
    pub planner: PlannerName,
    /// Overrides for the selected planner's config. After parsing this holds
    /// the fully resolved config.
    #[serde(default = "empty_object")]
    pub planner_config: Value,
    /// Deterministic LatCo only.
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub train: TrainLoopConfig,
    #[serde(default)]
    pub seed_data: SeedData,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

/// Typed planner settings, resolved from `planner` + `planner_config`.
#[derive(Debug, Clone, PartialEq)]
pub enum PlannerSettings {
    Latco(LatcoConfig),
    LatcoGaussian(GaussianLatcoConfig),
    Cem(CemConfig),
    Mppi(MppiConfig),
    ShootingGd(GdConfig),
    ShootingGn(GnConfig),
    Ilqr(IlqrConfig),
}

fn with_prefix(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { path, message } if !path.starts_with(prefix) => Error::Config {
            path: format!("{prefix}.{path}"),
            message,
        },
        e => e,
    }
}

fn typed<T: for<'de> Deserialize<'de>>(v: &Value) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "planner_config".to_string() } else { format!("planner_config.{path}") };
        Error::config(path, e.inner().to_string())
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("configs serialize to JSON")
}

impl PlannerSettings {
    /// Validated settings for `name` with the given JSON overrides (`null`
    /// or an object).
    pub fn parse(name: PlannerName, overrides: &Value) -> Result<Self> {
        let v = if overrides.is_null() { empty_object() } else { overrides.clone() };
        let settings = match name {
            PlannerName::Latco => PlannerSettings::Latco(typed(&v)?),
            PlannerName::LatcoGaussian => PlannerSettings::LatcoGaussian(typed(&v)?),
            PlannerName::Cem => PlannerSettings::Cem(typed(&v)?),
            PlannerName::Mppi => PlannerSettings::Mppi(typed(&v)?),
            PlannerName::ShootingGd => PlannerSettings::ShootingGd(typed(&v)?),
            PlannerName::ShootingGn => PlannerSettings::ShootingGn(typed(&v)?),
            PlannerName::Ilqr => PlannerSettings::Ilqr(typed(&v)?),
        };
        settings.validate()?;
        Ok(settings)
    }

    pub fn build(&self) -> Box<dyn Planner> {
        match self {
            PlannerSettings::Latco(c) => Box::new(LatcoPlanner::new(c.clone())),
            PlannerSettings::LatcoGaussian(c) => Box::new(GaussianLatcoPlanner::new(c.clone())),
            PlannerSettings::Cem(c) => Box::new(CemPlanner { config: c.clone() }),
            PlannerSettings::Mppi(c) => Box::new(MppiPlanner { config: c.clone() }),
            PlannerSettings::ShootingGd(c) => Box::new(GdPlanner { config: c.clone() }),
            PlannerSettings::ShootingGn(c) => Box::new(GnPlanner { config: c.clone() }),
            PlannerSettings::Ilqr(c) => Box::new(IlqrPlanner { config: c.clone() }),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PlannerSettings::Latco(c) => c.validate(),
            PlannerSettings::LatcoGaussian(c) => c.validate(),
            PlannerSettings::Cem(c) => c.validate(),
            PlannerSettings::Mppi(c) => c.validate(),
            PlannerSettings::ShootingGd(c) => c.validate(),
            PlannerSettings::ShootingGn(c) => c.validate(),
            PlannerSettings::Ilqr(c) => c.validate(),
        }
        .map_err(|e| with_prefix("planner_config", e))
    }

    fn to_value(&self) -> Value {
        match self {
            PlannerSettings::Latco(c) => to_value(c),
            PlannerSettings::LatcoGaussian(c) => to_value(c),
            PlannerSettings::Cem(c) => to_value(c),
            PlannerSettings::Mppi(c) => to_value(c),
            PlannerSettings::ShootingGd(c) => to_value(c),
            PlannerSettings::ShootingGn(c) => to_value(c),
            PlannerSettings::Ilqr(c) => to_value(c),
        }
    }
}

impl ExperimentConfig {
    /// Config with defaults everywhere except the environment and planner.
    pub fn new(env: EnvDescriptor, planner: PlannerName) -> Self {
        Self {
            env,
            planner,
            planner_config: empty_object(),
            ablation: Ablation::None,
            mpc: MpcConfig::default(),
            train: TrainLoopConfig::default(),
            seed_data: SeedData::None,
            bench: BenchConfig::default(),
            out_dir: default_out_dir(),
            seed: 0,
        }
    }

    /// Typed settings for the selected planner, with the ablation applied.
    pub fn planner_settings(&self) -> Result<PlannerSettings> {
        if self.planner != PlannerName::Latco && self.ablation != Ablation::None {
            return Err(Error::config(
                "ablation",
                format!("ablations apply to latco only, not {}", self.planner.as_str()),
            ));
        }
        let mut settings = PlannerSettings::parse(self.planner, &self.planner_config)?;
        if let PlannerSettings::Latco(c) = &mut settings {
            if self.ablation != Ablation::None {
                c.ablation = self.ablation;
            }
        }
        Ok(settings)
    }

    pub fn build_planner(&self) -> Result<Box<dyn Planner>> {
        Ok(self.planner_settings()?.build())
    }

    /// Validates everything and replaces `planner_config` with the fully
    /// resolved planner config.
    pub fn resolve(mut self) -> Result<Self> {
        self.env.validate()?;
        let settings = self.planner_settings()?;
        if let PlannerSettings::Latco(c) = &settings {
            self.ablation = c.ablation;
        }
        self.planner_config = settings.to_value();
        self.mpc.validate()?;
        self.train.validate()?;
        match &self.seed_data {
            SeedData::Reaching { .. } if !matches!(self.env, EnvDescriptor::Lottery(_)) => {
                return Err(Error::config("seed_data.reaching", "scripted reaching data exists for lottery only"))
            }
            SeedData::Reaching { episodes: 0 } => {
                return Err(Error::config("seed_data.reaching.episodes", "must be at least 1"))
            }
            _ => {}
        }
        if self.bench.horizons.is_empty() || self.bench.horizons.contains(&0) {
            return Err(Error::config("bench.horizons", "must be a nonempty list of positive horizons"));
        }
        if self.bench.block_size == 0 {
            return Err(Error::config("bench.block_size", "must be positive"));
        }
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize to JSON")
    }
}

/// Parses and validates a JSON experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".into() } else { path }, e.inner().to_string())
    })?;
    cfg.resolve()
}

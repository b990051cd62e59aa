use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latco::harness::{parse_config, preset, run_experiment, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "latco", version, about = "Collocation planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// One planning call from the reset state; writes the plan and its diagnostics.
    Plan(Common),
    /// Online model learning with MPC; writes the learning curve, diagnostics and checkpoint.
    Train(Common),
    /// Write the configs of a named study as one JSON file per run.
    Preset {
        name: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the config files (default `presets/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time block-tridiagonal against dense LM solves.
    BenchSolver(Common),
}

fn load(common: &Common, fallback: Option<ExperimentConfig>) -> latco::Result<ExperimentConfig> {
    let mut cfg = match (&common.config, fallback) {
        (Some(path), _) => parse_config(&fs::read_to_string(path)?)?,
        (None, Some(cfg)) => cfg,
        (None, None) => {
            return Err(latco::Error::InvalidArgument("--config is required".into()));
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(common: &Common, command: Command, fallback: Option<ExperimentConfig>) -> latco::Result<()> {
    let cfg = load(common, fallback)?;
    let manifest = run_experiment(&cfg, command)?;
    println!("wrote {} result files to {}", manifest.files.len(), cfg.out_dir.display());
    for (key, value) in &manifest.summary {
        println!("{key} = {value}");
    }
    Ok(())
}

fn write_preset(name: &str, seed: Option<u64>, out: Option<&Path>) -> latco::Result<()> {
    let runs = preset(name)?;
    let dir = out.map_or_else(|| PathBuf::from("presets").join(name), Path::to_path_buf);
    fs::create_dir_all(&dir)?;
    for (label, mut cfg) in runs {
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        let path = dir.join(format!("{label}.json"));
        fs::write(&path, cfg.to_json() + "\n")?;
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Plan(c) => run(c, Command::Plan, None),
        Cmd::Train(c) => run(c, Command::Train, None),
        Cmd::BenchSolver(c) => {
            let fallback = preset("bench_solver").ok().and_then(|mut v| v.pop()).map(|(_, cfg)| cfg);
            run(c, Command::BenchSolver, fallback)
        }
        Cmd::Preset { name, seed, out } => write_preset(name, *seed, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

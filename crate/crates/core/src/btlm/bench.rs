use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{dense_reference_solve, random_system, solve_system};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Block,
    Dense,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Block => "block",
            SolverKind::Dense => "dense",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub horizon: usize,
    pub block_size: usize,
    pub solver: SolverKind,
    pub wall_ms: f64,
}

/// Times one damped LM solve per horizon on both paths.
///
/// Each horizon gets a fixed random workload (seeded by `T`); the reported
/// time is the minimum over `repeats` runs.
pub fn solver_benchmark(
    horizons: &[usize],
    block_size: usize,
    solvers: &[SolverKind],
    repeats: usize,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &t in horizons {
        let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
        let system = random_system(&vec![block_size; t], block_size, &mut rng);
        for &solver in solvers {
            let mut best = f64::INFINITY;
            for _ in 0..repeats.max(1) {
                let start = Instant::now();
                let step = match solver {
                    SolverKind::Block => solve_system(&system, crate::defaults::LM_DAMPING)?,
                    SolverKind::Dense => dense_reference_solve(&system, crate::defaults::LM_DAMPING)?,
                };
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                std::hint::black_box(step);
                best = best.min(elapsed);
            }
            rows.push(BenchRow {
                horizon: t,
                block_size,
                solver,
                wall_ms: best,
            });
        }
    }
    Ok(rows)
}

pub fn write_benchmark_csv<W: Write>(mut out: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(out, "T,block_size,solver,wall_ms")?;
    for r in rows {
        writeln!(out, "{},{},{},{:.6}", r.horizon, r.block_size, r.solver, r.wall_ms)?;
    }
    Ok(())
}

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{expected_return, shooting_outcome, RolloutMode};
use crate::defaults as d;
use crate::dynamics::ActionVec;
use crate::error::{Error, Result};
use crate::planner::{IterationRecord, PlanDiagnostics, PlanOutcome, PlanProblem, Planner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub iterations: usize,
    pub population: usize,
    pub elites: usize,
    /// Initial sampling std, in units of the action bound.
    pub init_std: f64,
    pub mode: RolloutMode,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            iterations: d::CEM_ITERATIONS,
            population: d::CEM_POPULATION,
            elites: d::CEM_ELITES,
            init_std: d::CEM_INIT_STD,
            mode: RolloutMode::Sampled,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.population == 0 {
            return Err(Error::config("iterations", "iterations and population must be at least 1"));
        }
        if self.elites == 0 || self.elites > self.population {
            return Err(Error::config("elites", format!("must be in 1..={}", self.population)));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::config("init_std", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiConfig {
    pub iterations: usize,
    pub population: usize,
    pub init_std: f64,
    pub temperature: f64,
    pub mode: RolloutMode,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            iterations: d::CEM_ITERATIONS,
            population: d::CEM_POPULATION,
            init_std: d::CEM_INIT_STD,
            temperature: d::MPPI_TEMPERATURE,
            mode: RolloutMode::Sampled,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.population == 0 {
            return Err(Error::config("iterations", "iterations and population must be at least 1"));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::config("init_std", "must be positive"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("temperature", "must be positive"));
        }
        Ok(())
    }
}

/// Mean and std (divisor `k`) of the `k` highest-return samples.
pub fn cem_refit(samples: &[DVector<f64>], returns: &[f64], k: usize) -> (DVector<f64>, DVector<f64>) {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]));
    let elite: Vec<f64> = vec![1.0 / k as f64; k];
    let picked: Vec<&DVector<f64>> = order[..k].iter().map(|&i| &samples[i]).collect();
    weighted_moments(&picked, &elite)
}

/// Softmax of `γ·R`, shifted by the max for stability.
pub fn mppi_weights(returns: &[f64], temperature: f64) -> Vec<f64> {
    let top = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = returns.iter().map(|r| (temperature * (r - top)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Softmax-weighted mean and std of the samples.
pub fn mppi_refit(samples: &[DVector<f64>], returns: &[f64], temperature: f64) -> (DVector<f64>, DVector<f64>) {
    let w = mppi_weights(returns, temperature);
    let refs: Vec<&DVector<f64>> = samples.iter().collect();
    weighted_moments(&refs, &w)
}

fn weighted_moments(samples: &[&DVector<f64>], w: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let n = samples[0].len();
    let mut mean = DVector::zeros(n);
    for (s, &wi) in samples.iter().zip(w) {
        mean.axpy(wi, s, 1.0);
    }
    let mut var = DVector::zeros(n);
    for (s, &wi) in samples.iter().zip(w) {
        let dev = *s - &mean;
        var.axpy(wi, &dev.component_mul(&dev), 1.0);
    }
    (mean, var.map(f64::sqrt))
}

fn unflatten(x: &DVector<f64>, m: usize) -> Vec<ActionVec> {
    x.as_slice().chunks(m).map(DVector::from_column_slice).collect()
}

enum Refit {
    Elites(usize),
    Softmax(f64),
}

struct SamplerSpec {
    iterations: usize,
    population: usize,
    init_std: f64,
    mode: RolloutMode,
    refit: Refit,
}

/// Shared loop of CEM and MPPI. Candidates are drawn sequentially from the
/// master rng, scored in parallel with per-candidate rollout seeds, then refit.
fn sample_plan(problem: &PlanProblem<'_>, spec: &SamplerSpec, rng: &mut dyn RngCore) -> Result<PlanOutcome> {
    problem.validate()?;
    let m = problem.action_dim();
    let dim = problem.horizon * m;
    let bound = problem.action_bound;
    let mut mean: DVector<f64> = DVector::zeros(dim);
    let mut std: DVector<f64> = DVector::from_element(dim, spec.init_std * bound);
    let mut diagnostics = PlanDiagnostics::default();
    let mut best = f64::NEG_INFINITY;
    for k in 0..spec.iterations {
        let samples: Vec<DVector<f64>> = (0..spec.population)
            .map(|_| {
                DVector::from_fn(dim, |i, _| {
                    let e: f64 = rng.sample(StandardNormal);
                    (mean[i] + std[i] * e).clamp(-bound, bound)
                })
            })
            .collect();
        let seeds: Vec<u64> = (0..spec.population).map(|_| rng.next_u64()).collect();
        let returns: Vec<f64> = samples
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(x, &seed)| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                expected_return(problem, &unflatten(x, m), spec.mode, &mut r)
            })
            .collect::<Result<_>>()
            .map_err(|e| e.at_iteration(k))?;
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("candidate return").at_iteration(k));
        }
        best = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mean, std) = match spec.refit {
            Refit::Elites(e) => cem_refit(&samples, &returns, e),
            Refit::Softmax(g) => mppi_refit(&samples, &returns, g),
        };
        diagnostics.push(IterationRecord {
            iteration: k,
            reward_sum: best,
            max_violation: 0.0,
            mean_lambda_dyn: 0.0,
            mean_lambda_act: 0.0,
        });
    }
    shooting_outcome(problem, &unflatten(&mean, m), Some(best), diagnostics)
}

/// Cross-entropy method. The outcome's `planned_return` is the best sampled
/// return of the final iteration.
pub fn cem_plan(problem: &PlanProblem<'_>, cfg: &CemConfig, rng: &mut dyn RngCore) -> Result<PlanOutcome> {
    cfg.validate()?;
    let spec = SamplerSpec {
        iterations: cfg.iterations,
        population: cfg.population,
        init_std: cfg.init_std,
        mode: cfg.mode,
        refit: Refit::Elites(cfg.elites),
    };
    sample_plan(problem, &spec, rng)
}

/// Softmax-weighted refitting over the whole population.
pub fn mppi_plan(problem: &PlanProblem<'_>, cfg: &MppiConfig, rng: &mut dyn RngCore) -> Result<PlanOutcome> {
    cfg.validate()?;
    let spec = SamplerSpec {
        iterations: cfg.iterations,
        population: cfg.population,
        init_std: cfg.init_std,
        mode: cfg.mode,
        refit: Refit::Softmax(cfg.temperature),
    };
    sample_plan(problem, &spec, rng)
}

#[derive(Debug, Clone, Default)]
pub struct CemPlanner {
    pub config: CemConfig,
}

impl Planner for CemPlanner {
    fn name(&self) -> &'static str {
        "cem"
    }

    fn plan(&self, problem: &PlanProblem<'_>, rng: &mut dyn RngCore) -> Result<PlanOutcome> {
        cem_plan(problem, &self.config, rng)
    }
}

#[derive(Debug, Clone, Default)]
pub struct MppiPlanner {
    pub config: MppiConfig,
}

impl Planner for MppiPlanner {
    fn name(&self) -> &'static str {
        "mppi"
    }

    fn plan(&self, problem: &PlanProblem<'_>, rng: &mut dyn RngCore) -> Result<PlanOutcome> {
        mppi_plan(problem, &self.config, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ConstantReward, LinearGaussianDynamics};
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn softmax_weight_examples() {
        assert_eq!(mppi_weights(&[1.0, 1.0], 10.0), vec![0.5, 0.5]);
        let w = mppi_weights(&[0.0, 0.1], 10.0);
        assert_abs_diff_eq!(w[0], 0.26894, epsilon = 1e-5);
        assert_abs_diff_eq!(w[1], 0.73106, epsilon = 1e-5);
    }

    #[test]
    fn huge_temperature_equals_single_elite() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples: Vec<DVector<f64>> = (0..20)
            .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let returns: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let (m1, s1) = mppi_refit(&samples, &returns, 1e6);
        let (m2, s2) = cem_refit(&samples, &returns, 1);
        assert!((m1 - m2).amax() < 1e-9);
        assert!((s1 - s2).amax() < 1e-4);
    }

    /// `r = −‖a − 0.3‖²` per step, through `z' = a` and `r(z) = −‖z − 0.3‖²`.
    #[test]
    fn cem_finds_analytic_optimum() {
        let m = LinearGaussianDynamics::new(
            nalgebra::DMatrix::zeros(1, 1),
            nalgebra::DMatrix::identity(1, 1),
            v(&[0.0]),
        )
        .unwrap();
        let r = crate::dynamics::QuadraticReward::new(v(&[0.3]), v(&[1.0]));
        let z1 = v(&[0.0]);
        let p = PlanProblem::new(&m, &r, &z1, 3, 1.0);
        let cfg = CemConfig {
            mode: RolloutMode::Mean,
            ..Default::default()
        };
        let out = cem_plan(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(out.actions.iter().all(|a| (a[0] - 0.3).abs() < 0.05));
        let sym = crate::dynamics::QuadraticReward::new(v(&[0.0]), v(&[1.0]));
        let p = PlanProblem::new(&m, &sym, &z1, 3, 1.0);
        let out = mppi_plan(&p, &MppiConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(out.actions.iter().all(|a| a[0].abs() < 0.05));
    }

    #[test]
    fn seeded_and_clamped() {
        let m = LinearGaussianDynamics::shift(1, 0.2);
        let r = ConstantReward { dim: 1, value: 0.0 };
        let z1 = v(&[0.0]);
        let p = PlanProblem::new(&m, &r, &z1, 4, 0.2);
        let cfg = CemConfig {
            population: 50,
            elites: 5,
            init_std: 5.0,
            ..Default::default()
        };
        let a = cem_plan(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = cem_plan(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.actions.iter().all(|x| x.amax() <= 0.2));
        assert!(CemConfig {
            elites: 2000,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}

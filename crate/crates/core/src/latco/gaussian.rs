use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{action_residual, dual_update, nonzero, positive, reward_residual, reward_residual_slope, Multipliers};
use crate::btlm::{solve_system, ResidualBlock, ResidualBlockSystem};
use crate::defaults as d;
use crate::dynamics::{ActionVec, GaussianDynamics, RewardModel, StateVec};
use crate::error::{Error, Result};
use crate::planner::{IterationRecord, PlanDiagnostics, PlanOutcome, PlanProblem, Planner};

/// Gaussian collocation variables: per-step means and log standard deviations
/// of `q(z_2)..q(z_{H+1})`, plus the actions. The start is a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPlan {
    pub start: StateVec,
    pub means: Vec<StateVec>,
    pub log_stds: Vec<StateVec>,
    pub actions: Vec<ActionVec>,
}

impl GaussianPlan {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.start.len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, |a| a.len())
    }

    pub fn block_size(&self) -> usize {
        2 * self.state_dim() + self.action_dim()
    }

    pub fn std(&self, t: usize) -> StateVec {
        self.log_stds[t].map(f64::exp)
    }

    pub fn to_vars(&self) -> DVector<f64> {
        let (n, b) = (self.state_dim(), self.block_size());
        let mut v = DVector::zeros(b * self.horizon());
        for t in 0..self.horizon() {
            v.rows_mut(t * b, n).copy_from(&self.means[t]);
            v.rows_mut(t * b + n, n).copy_from(&self.log_stds[t]);
            v.rows_mut(t * b + 2 * n, b - 2 * n).copy_from(&self.actions[t]);
        }
        v
    }

    /// Writes `v` back, clamping log standard deviations to their range.
    pub fn set_vars(&mut self, v: &DVector<f64>) {
        let (n, b) = (self.state_dim(), self.block_size());
        for t in 0..self.horizon() {
            self.means[t].copy_from(&v.rows(t * b, n));
            self.log_stds[t] = v.rows(t * b + n, n).map(|x| x.clamp(d::LOG_SIGMA_MIN, d::LOG_SIGMA_MAX));
            self.actions[t].copy_from(&v.rows(t * b + 2 * n, b - 2 * n));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.means
            .iter()
            .chain(&self.log_stds)
            .chain(&self.actions)
            .all(|x| x.iter().all(|v| v.is_finite()))
    }
}

/// Standard-normal draws for one evaluation of the Gaussian Lagrangian.
///
/// `state[t][k]` places particle `k` of planned distribution `t`; it is shared
/// by that step's reward estimate and the transition leaving it.
/// `transition[t][k]` is the model noise of particle `k` on transition `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleNoise {
    pub state: Vec<Vec<StateVec>>,
    pub transition: Vec<Vec<StateVec>>,
}

impl ParticleNoise {
    pub fn draw(horizon: usize, particles: usize, state_dim: usize, rng: &mut dyn RngCore) -> Self {
        let mut block = || -> Vec<Vec<StateVec>> {
            (0..horizon)
                .map(|_| {
                    (0..particles)
                        .map(|_| DVector::from_fn(state_dim, |_, _| rng.sample::<f64, _>(StandardNormal)))
                        .collect()
                })
                .collect()
        };
        let state = block();
        let transition = block();
        Self { state, transition }
    }

    pub fn particles(&self) -> usize {
        self.state.first().map_or(0, Vec::len)
    }

    fn validate(&self, horizon: usize, state_dim: usize) -> Result<()> {
        let k = self.particles();
        if k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 particles, got {k}")));
        }
        for (name, draws) in [("state noise", &self.state), ("transition noise", &self.transition)] {
            if draws.len() != horizon {
                return Err(Error::Dimension {
                    context: name,
                    expected: horizon,
                    actual: draws.len(),
                });
            }
            for row in draws {
                if row.len() != k {
                    return Err(Error::Dimension {
                        context: name,
                        expected: k,
                        actual: row.len(),
                    });
                }
                if let Some(bad) = row.iter().find(|x| x.len() != state_dim) {
                    return Err(Error::Dimension {
                        context: name,
                        expected: state_dim,
                        actual: bad.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Per-step particle estimates: the expected reward under planned
/// distribution `t` and the moments of the one-step prediction into it.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTerms {
    pub expected_reward: f64,
    pub mean: StateVec,
    pub std: StateVec,
}

struct Moments {
    mean: StateVec,
    std: StateVec,
    mean_mu: DMatrix<f64>,
    mean_a: DMatrix<f64>,
    std_mu: DMatrix<f64>,
    std_a: DMatrix<f64>,
}

/// Pushes particles `μ + σ⊙ξ` through the sampled model with fixed noise and
/// returns the sample moments (divisor `K`) with their derivatives in `μ` and
/// `a`. Derivatives in `σ` are deliberately not formed.
fn propagate(
    model: &dyn GaussianDynamics,
    mu: &StateVec,
    sigma: Option<&StateVec>,
    a: &ActionVec,
    xi: &[StateVec],
    eps: &[StateVec],
    jac: bool,
) -> Result<Moments> {
    let n = mu.len();
    let m = a.len();
    let k = eps.len();
    let kf = k as f64;
    let mut ys = Vec::with_capacity(k);
    let mut dz = Vec::with_capacity(if jac { k } else { 0 });
    let mut da = Vec::with_capacity(if jac { k } else { 0 });
    for p in 0..k {
        let z = match sigma {
            Some(s) => mu + s.component_mul(&xi[p]),
            None => mu.clone(),
        };
        if jac {
            let lin = model.linearize(&z, a)?;
            ys.push(&lin.mean + lin.std.component_mul(&eps[p]));
            let scale = DMatrix::from_diagonal(&eps[p]);
            dz.push(&lin.mean_z + &scale * &lin.std_z);
            da.push(&lin.mean_a + &scale * &lin.std_a);
        } else {
            let pred = model.predict(&z, a)?;
            ys.push(&pred.mean + pred.std.component_mul(&eps[p]));
        }
    }
    let mean = ys.iter().fold(DVector::zeros(n), |acc, y| acc + y) / kf;
    let std = DVector::from_fn(n, |i, _| (ys.iter().map(|y| (y[i] - mean[i]).powi(2)).sum::<f64>() / kf).sqrt());
    if mean.iter().chain(std.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("particle prediction"));
    }
    let mut out = Moments {
        mean_mu: DMatrix::zeros(n, n),
        mean_a: DMatrix::zeros(n, m),
        std_mu: DMatrix::zeros(n, n),
        std_a: DMatrix::zeros(n, m),
        mean,
        std,
    };
    if jac {
        for p in 0..k {
            out.mean_mu += &dz[p];
            out.mean_a += &da[p];
            for i in 0..n {
                if out.std[i] > 0.0 {
                    let c = (ys[p][i] - out.mean[i]) / (kf * out.std[i]);
                    let mut row = out.std_mu.row_mut(i);
                    row += dz[p].row(i) * c;
                    let mut row = out.std_a.row_mut(i);
                    row += da[p].row(i) * c;
                }
            }
        }
        out.mean_mu /= kf;
        out.mean_a /= kf;
    }
    Ok(out)
}

fn expected_reward(reward: &dyn RewardModel, mu: &StateVec, sigma: &StateVec, xi: &[StateVec]) -> (f64, StateVec) {
    let kf = xi.len() as f64;
    let mut r = 0.0;
    let mut g = DVector::zeros(mu.len());
    for x in xi {
        let z = mu + sigma.component_mul(x);
        r += reward.reward(&z);
        g += reward.gradient(&z);
    }
    (r / kf, g / kf)
}

fn transition(
    q: &GaussianPlan,
    model: &dyn GaussianDynamics,
    noise: &ParticleNoise,
    t: usize,
    jac: bool,
) -> Result<Moments> {
    if t == 0 {
        propagate(model, &q.start, None, &q.actions[0], &[], &noise.transition[0], jac)
    } else {
        let sigma = q.std(t - 1);
        propagate(model, &q.means[t - 1], Some(&sigma), &q.actions[t], &noise.state[t - 1], &noise.transition[t], jac)
    }
}

fn check_plan(q: &GaussianPlan, model: &dyn GaussianDynamics, reward: &dyn RewardModel, noise: &ParticleNoise) -> Result<()> {
    let h = q.horizon();
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let n = model.state_dim();
    if q.start.len() != n || reward.state_dim() != n {
        return Err(Error::Dimension {
            context: "gaussian plan state",
            expected: n,
            actual: q.start.len(),
        });
    }
    if q.means.len() != h || q.log_stds.len() != h {
        return Err(Error::Dimension {
            context: "gaussian plan length",
            expected: h,
            actual: q.means.len().min(q.log_stds.len()),
        });
    }
    if !q.is_finite() {
        return Err(Error::NonFinite("gaussian plan"));
    }
    noise.validate(h, n)
}

/// Particle estimates of every term in the Gaussian Lagrangian at `q`.
pub fn gaussian_lagrangian_terms(
    q: &GaussianPlan,
    model: &dyn GaussianDynamics,
    reward: &dyn RewardModel,
    noise: &ParticleNoise,
) -> Result<Vec<MomentTerms>> {
    check_plan(q, model, reward, noise)?;
    (0..q.horizon())
        .map(|t| {
            let mom = transition(q, model, noise, t, false)?;
            let (r, _) = expected_reward(reward, &q.means[t], &q.std(t), &noise.state[t]);
            Ok(MomentTerms {
                expected_reward: r,
                mean: mom.mean,
                std: mom.std,
            })
        })
        .collect()
}

struct Evaluation {
    reward_sum: f64,
    dyn_viol: Vec<f64>,
    act_viol: Vec<f64>,
}

fn evaluate(q: &GaussianPlan, problem: &PlanProblem<'_>, noise: &ParticleNoise) -> Result<Evaluation> {
    let terms = gaussian_lagrangian_terms(q, problem.dynamics, problem.reward, noise)?;
    let mut ev = Evaluation {
        reward_sum: 0.0,
        dyn_viol: Vec::with_capacity(terms.len()),
        act_viol: Vec::with_capacity(terms.len()),
    };
    for (t, term) in terms.iter().enumerate() {
        let a = &q.actions[t];
        ev.reward_sum += term.expected_reward - problem.action_cost * a.norm_squared();
        let vm = (&q.means[t] - &term.mean).norm_squared();
        let vs = (q.std(t) - &term.std).norm_squared();
        ev.dyn_viol.push(vm.max(vs));
        ev.act_viol.push(action_residual(a, problem.action_bound).norm_squared());
    }
    Ok(ev)
}

/// Residual system of the Gaussian Lagrangian at `q` under fixed noise.
///
/// Block `t` holds `(μ_t, logσ_t, a_t)`. Its rows are the reward residual of
/// step `t`, the action residual, the moment residuals of transition 0 when
/// `t = 0`, and of transition `t + 1` when it exists. No residual passes a
/// gradient to `logσ` other than the standard-deviation match into it, so
/// the Jacobian is exact in the `μ` and `a` columns and in the nonzero `logσ`
/// entries only.
pub fn build_gaussian_system(
    q: &GaussianPlan,
    lam: &Multipliers,
    problem: &PlanProblem<'_>,
    noise: &ParticleNoise,
) -> Result<ResidualBlockSystem> {
    let h = q.horizon();
    let n = q.state_dim();
    let m = q.action_dim();
    let b = 2 * n + m;
    let moments: Vec<Moments> = (0..h).map(|t| transition(q, problem.dynamics, noise, t, true)).collect::<Result<_>>()?;
    let mut blocks = Vec::with_capacity(h);
    for t in 0..h {
        let a = &q.actions[t];
        let first = t == 0;
        let coupled = t + 1 < h;
        let rows = 1 + m + if first { 2 * n } else { 0 } + if coupled { 2 * n } else { 0 };
        let mut res = DVector::zeros(rows);
        let mut ja = DMatrix::zeros(rows, b);
        let mut jb = coupled.then(|| DMatrix::zeros(rows, b));

        let (er, grad) = expected_reward(problem.reward, &q.means[t], &q.std(t), &noise.state[t]);
        let step = er - problem.action_cost * a.norm_squared();
        if !step.is_finite() {
            return Err(Error::NonFinite("expected reward"));
        }
        res[0] = reward_residual(step);
        let slope = reward_residual_slope(step);
        for i in 0..n {
            ja[(0, i)] = slope * grad[i];
        }
        for i in 0..m {
            ja[(0, 2 * n + i)] = slope * (-2.0 * problem.action_cost * a[i]);
        }

        let w_act = lam.action[t].sqrt();
        let act = action_residual(a, problem.action_bound);
        for i in 0..m {
            res[1 + i] = w_act * act[i];
            if act[i] > 0.0 {
                ja[(1 + i, 2 * n + i)] = w_act * a[i].signum();
            }
        }

        let mut row = 1 + m;
        if first {
            let w = lam.dynamics[0].sqrt();
            let mo = &moments[0];
            let sigma = q.std(0);
            res.rows_mut(row, n).copy_from(&((&q.means[0] - &mo.mean) * w));
            res.rows_mut(row + n, n).copy_from(&((&sigma - &mo.std) * w));
            for i in 0..n {
                ja[(row + i, i)] = w;
                ja[(row + n + i, n + i)] = w * sigma[i];
            }
            ja.view_mut((row, 2 * n), (n, m)).copy_from(&(&mo.mean_a * -w));
            ja.view_mut((row + n, 2 * n), (n, m)).copy_from(&(&mo.std_a * -w));
            row += 2 * n;
        }
        if let Some(jb) = jb.as_mut() {
            let w = lam.dynamics[t + 1].sqrt();
            let mo = &moments[t + 1];
            let sigma = q.std(t + 1);
            res.rows_mut(row, n).copy_from(&((&q.means[t + 1] - &mo.mean) * w));
            res.rows_mut(row + n, n).copy_from(&((&sigma - &mo.std) * w));
            ja.view_mut((row, 0), (n, n)).copy_from(&(&mo.mean_mu * -w));
            ja.view_mut((row + n, 0), (n, n)).copy_from(&(&mo.std_mu * -w));
            for i in 0..n {
                jb[(row + i, i)] = w;
                jb[(row + n + i, n + i)] = w * sigma[i];
            }
            jb.view_mut((row, 2 * n), (n, m)).copy_from(&(&mo.mean_a * -w));
            jb.view_mut((row + n, 2 * n), (n, m)).copy_from(&(&mo.std_a * -w));
        }
        blocks.push(ResidualBlock {
            residual: res,
            a: ja,
            b: jb,
        });
    }
    ResidualBlockSystem::new(vec![b; h], blocks)
}

/// Uniform actions; means and log standard deviations from forward particle
/// propagation under `noise`, so the moment constraints hold at the start.
fn init_gaussian_plan(problem: &PlanProblem<'_>, noise: &ParticleNoise, rng: &mut dyn RngCore) -> Result<GaussianPlan> {
    let n = problem.state_dim();
    let m = problem.action_dim();
    let h = problem.horizon;
    let bound = problem.action_bound;
    let actions: Vec<ActionVec> = (0..h)
        .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-bound..=bound)))
        .collect();
    let mut q = GaussianPlan {
        start: problem.start.clone(),
        means: vec![DVector::zeros(n); h],
        log_stds: vec![DVector::from_element(n, d::LOG_SIGMA_MIN); h],
        actions,
    };
    for t in 0..h {
        let mo = transition(&q, problem.dynamics, noise, t, false)?;
        q.means[t] = mo.mean;
        q.log_stds[t] = mo.std.map(|s| s.max(f64::MIN_POSITIVE).ln().clamp(d::LOG_SIGMA_MIN, d::LOG_SIGMA_MAX));
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianLatcoConfig {
    pub iterations: usize,
    pub eps_dyn: f64,
    pub eps_act: f64,
    pub particles: usize,
    pub dual_step: f64,
    pub dual_stabilizer: f64,
    pub lambda_dyn_init: f64,
    pub lambda_act_init: f64,
    pub damping: f64,
    pub dual_period: usize,
    pub restarts: usize,
}

impl Default for GaussianLatcoConfig {
    fn default() -> Self {
        Self {
            iterations: d::GAUSSIAN_ITERATIONS,
            eps_dyn: d::GAUSSIAN_EPS_DYN,
            eps_act: d::LATCO_EPS_ACT,
            particles: d::GAUSSIAN_PARTICLES,
            dual_step: d::DUAL_STEP,
            dual_stabilizer: d::DUAL_STABILIZER,
            lambda_dyn_init: d::LAMBDA_DYN_INIT,
            lambda_act_init: d::LAMBDA_ACT_INIT,
            damping: d::LM_DAMPING,
            dual_period: d::DUAL_PERIOD,
            restarts: d::RESTARTS,
        }
    }
}

impl GaussianLatcoConfig {
    pub fn validate(&self) -> Result<()> {
        nonzero("iterations", self.iterations)?;
        positive("eps_dyn", self.eps_dyn)?;
        positive("eps_act", self.eps_act)?;
        if self.particles < 2 {
            return Err(Error::config("particles", "must be at least 2"));
        }
        positive("dual_step", self.dual_step)?;
        positive("dual_stabilizer", self.dual_stabilizer)?;
        positive("lambda_dyn_init", self.lambda_dyn_init)?;
        positive("lambda_act_init", self.lambda_act_init)?;
        positive("damping", self.damping)?;
        nonzero("dual_period", self.dual_period)?;
        nonzero("restarts", self.restarts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianResult {
    pub plan: GaussianPlan,
    pub multipliers: Multipliers,
    pub diagnostics: PlanDiagnostics,
    /// Particle estimate of `Σ_t E[r(z_{t+1})] − c‖a_t‖²`.
    pub planned_return: f64,
    /// Largest per-step max of the mean and std violations.
    pub max_violation: f64,
    pub max_action_violation: f64,
}

impl GaussianResult {
    pub fn into_outcome(self, problem: &PlanProblem<'_>) -> PlanOutcome {
        PlanOutcome {
            actions: self.plan.actions.iter().map(|a| problem.clamp(a)).collect(),
            states: self.plan.means,
            planned_return: self.planned_return,
            max_violation: self.max_violation,
            diagnostics: self.diagnostics,
        }
    }
}

/// Gaussian collocation: the deterministic LM + dual loop over
/// `(μ, logσ, a)` with particle moment residuals. Noise is redrawn before
/// every iteration and held fixed through its step and dual update.
pub fn latco_gaussian(
    problem: &PlanProblem<'_>,
    cfg: &GaussianLatcoConfig,
    rng: &mut dyn RngCore,
) -> Result<GaussianResult> {
    problem.validate()?;
    cfg.validate()?;
    let (h, n) = (problem.horizon, problem.state_dim());
    let mut noise = ParticleNoise::draw(h, cfg.particles, n, rng);
    let mut q = init_gaussian_plan(problem, &noise, rng)?;
    let mut lam = Multipliers::constant(h, cfg.lambda_dyn_init, cfg.lambda_act_init);
    let mut diagnostics = PlanDiagnostics::default();
    let mut vars = q.to_vars();
    let mut ev = evaluate(&q, problem, &noise)?;
    for k in 0..cfg.iterations {
        if k > 0 {
            noise = ParticleNoise::draw(h, cfg.particles, n, rng);
        }
        let step = build_gaussian_system(&q, &lam, problem, &noise)
            .and_then(|sys| solve_system(&sys, cfg.damping))
            .map_err(|e| e.at_iteration(k))?;
        vars -= step;
        q.set_vars(&vars);
        if !q.is_finite() {
            return Err(Error::NonFinite("gaussian plan").at_iteration(k));
        }
        vars = q.to_vars();
        ev = evaluate(&q, problem, &noise).map_err(|e| e.at_iteration(k))?;
        if (k + 1) % cfg.dual_period == 0 {
            for t in 0..h {
                lam.dynamics[t] = dual_update(lam.dynamics[t], ev.dyn_viol[t], cfg.eps_dyn, cfg.dual_step, cfg.dual_stabilizer)?;
                lam.action[t] = dual_update(lam.action[t], ev.act_viol[t], cfg.eps_act, cfg.dual_step, cfg.dual_stabilizer)?;
            }
        }
        diagnostics.push(IterationRecord {
            iteration: k,
            reward_sum: ev.reward_sum,
            max_violation: ev.dyn_viol.iter().copied().fold(0.0, f64::max),
            mean_lambda_dyn: lam.mean_dynamics(),
            mean_lambda_act: lam.mean_action(),
        });
    }
    Ok(GaussianResult {
        planned_return: ev.reward_sum,
        max_violation: ev.dyn_viol.iter().copied().fold(0.0, f64::max),
        max_action_violation: ev.act_viol.iter().copied().fold(0.0, f64::max),
        plan: q,
        multipliers: lam,
        diagnostics,
    })
}

#[derive(Debug, Clone, Default)]
pub struct GaussianLatcoPlanner {
    pub config: GaussianLatcoConfig,
}

impl GaussianLatcoPlanner {
    pub fn new(config: GaussianLatcoConfig) -> Self {
        Self { config }
    }
}

impl Planner for GaussianLatcoPlanner {
    fn name(&self) -> &'static str {
        "latco_gaussian"
    }

    fn plan(&self, problem: &PlanProblem<'_>, rng: &mut dyn RngCore) -> Result<PlanOutcome> {
        Ok(latco_gaussian(problem, &self.config, rng)?.into_outcome(problem))
    }

    fn restarts(&self) -> usize {
        self.config.restarts
    }

    fn feasibility_tolerance(&self) -> f64 {
        self.config.eps_dyn
    }
}

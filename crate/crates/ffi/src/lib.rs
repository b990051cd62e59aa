//! C ABI over the planners, environments and experiment runner.
//!
//! Objects are opaque handles created by `*_new`/`*_parse` functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`LatcoStatus`]; on failure a message is available from
//! [`latco_last_error_message`] on the same thread until the next failing
//! call. Panics are caught at the boundary and reported as
//! [`LatcoStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use latco::control::plan_with_restarts;
use latco::dynamics::ActionVec;
use latco::harness::{run_experiment, Command, ExperimentConfig, PlannerName, PlannerSettings};
use latco::planner::{PlanProblem, Planner};
use latco::worlds::{make_env, Env, EnvDescriptor};
use latco::Error;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatcoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Dimension = 4,
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    EpisodeDone = 8,
    Panic = 9,
    Other = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatcoCommand {
    Plan = 0,
    Train = 1,
    BenchSolver = 2,
}

/// Scalar results of one planning call.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LatcoPlanSummary {
    pub planned_return: f64,
    pub max_violation: f64,
    pub iterations: usize,
}

/// Parsed experiment config.
pub struct LatcoExperiment(ExperimentConfig);

/// Environment instance.
pub struct LatcoEnv(Box<dyn Env>);

/// Configured planner.
pub struct LatcoPlanner(Box<dyn Planner>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(LatcoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config { .. } | Error::InvalidArgument(_) => LatcoStatus::Config,
            Error::Dimension { .. } => LatcoStatus::Dimension,
            Error::NonFinite(_)
            | Error::Factorization { .. }
            | Error::Singular
            | Error::AtIteration { .. }
            | Error::Ilqr(_)
            | Error::AllRestartsFailed(_) => LatcoStatus::Numerical,
            Error::Io(_) => LatcoStatus::Io,
            Error::EpisodeDone => LatcoStatus::EpisodeDone,
            _ => LatcoStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LatcoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LatcoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LatcoStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(LatcoStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(LatcoStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn read_json(p: *const c_char, what: &str) -> Result<serde_json::Value, Failure> {
    if p.is_null() {
        return Ok(serde_json::Value::Null);
    }
    let text = read_str(p, what)?;
    serde_json::from_str(text).map_err(|e| Failure(LatcoStatus::Config, format!("{what}: {e}")))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len < needed {
        return Err(Failure(
            LatcoStatus::BufferTooSmall,
            format!("{what} holds {len} values, {needed} needed"),
        ));
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn latco_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn latco_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn latco_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a JSON experiment config.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn latco_experiment_parse(json: *const c_char, out: *mut *mut LatcoExperiment) -> LatcoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = latco::harness::parse_config(read_str(json, "json")?)?;
        *out = Box::into_raw(Box::new(LatcoExperiment(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`latco_experiment_parse`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn latco_experiment_free(cfg: *mut LatcoExperiment) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the experiment. `out_dir` overrides the configured output
/// directory when not NULL.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn latco_experiment_run(
    cfg: *const LatcoExperiment,
    command: LatcoCommand,
    out_dir: *const c_char,
) -> LatcoStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let mut c = cfg.0.clone();
        if !out_dir.is_null() {
            c.out_dir = read_str(out_dir, "out_dir")?.into();
        }
        let command = match command {
            LatcoCommand::Plan => Command::Plan,
            LatcoCommand::Train => Command::Train,
            LatcoCommand::BenchSolver => Command::BenchSolver,
        };
        run_experiment(&c, command)?;
        Ok(())
    })
}

/// Creates an environment from a descriptor: a bare name such as
/// `"lottery"` or an object such as `{"name": "pointmass", "d": 1.5}`.
///
/// # Safety
/// `descriptor` must be NUL-terminated JSON and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn latco_env_new(descriptor: *const c_char, out: *mut *mut LatcoEnv) -> LatcoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(descriptor, "descriptor")?;
        let desc: EnvDescriptor =
            serde_json::from_str(text).map_err(|e| Failure(LatcoStatus::Config, format!("env descriptor: {e}")))?;
        *out = Box::into_raw(Box::new(LatcoEnv(make_env(&desc)?)));
        Ok(())
    })
}

/// # Safety
/// `env` must come from [`latco_env_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn latco_env_free(env: *mut LatcoEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn latco_env_dims(
    env: *const LatcoEnv,
    state_dim: *mut usize,
    action_dim: *mut usize,
    action_bound: *mut f64,
) -> LatcoStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if state_dim.is_null() || action_dim.is_null() || action_bound.is_null() {
            return Err(null("output"));
        }
        *state_dim = env.0.state_dim();
        *action_dim = env.0.action_dim();
        *action_bound = env.0.action_bound();
        Ok(())
    })
}

/// Resets and writes the initial state into `state` (length `len`).
///
/// # Safety
/// `env` must be a live handle and `state` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn latco_env_reset(env: *mut LatcoEnv, seed: u64, state: *mut f64, len: usize) -> LatcoStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let out = out_slice(state, len, env.0.state_dim(), "state")?;
        let z = env.0.reset(seed);
        out[..z.len()].copy_from_slice(z.as_slice());
        Ok(())
    })
}

/// Applies one action (`action_len` doubles) and writes the next state,
/// reward and done flag.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn latco_env_step(
    env: *mut LatcoEnv,
    action: *const f64,
    action_len: usize,
    state: *mut f64,
    state_len: usize,
    reward: *mut f64,
    done: *mut bool,
) -> LatcoStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        if action.is_null() {
            return Err(null("action"));
        }
        if reward.is_null() || done.is_null() {
            return Err(null("output"));
        }
        let out = out_slice(state, state_len, env.0.state_dim(), "state")?;
        let a = ActionVec::from_column_slice(std::slice::from_raw_parts(action, action_len));
        let step = env.0.step(&a)?;
        out[..step.state.len()].copy_from_slice(step.state.as_slice());
        *reward = step.reward;
        *done = step.done;
        Ok(())
    })
}

/// Creates a planner by name (`latco`, `latco_gaussian`, `cem`, `mppi`,
/// `shooting_gd`, `shooting_gn`, `ilqr`) with optional JSON overrides
/// (NULL for defaults).
///
/// # Safety
/// `name` must be NUL-terminated, `overrides` NULL or NUL-terminated, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn latco_planner_new(
    name: *const c_char,
    overrides: *const c_char,
    out: *mut *mut LatcoPlanner,
) -> LatcoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name: PlannerName = read_str(name, "name")?.parse()?;
        let settings = PlannerSettings::parse(name, &read_json(overrides, "overrides")?)?;
        *out = Box::into_raw(Box::new(LatcoPlanner(settings.build())));
        Ok(())
    })
}

/// # Safety
/// `planner` must come from [`latco_planner_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn latco_planner_free(planner: *mut LatcoPlanner) {
    if !planner.is_null() {
        drop(Box::from_raw(planner));
    }
}

/// Plans `horizon` actions from the environment's current state with its
/// ground-truth models. Actions are written time-major into `actions`
/// (`horizon · action_dim` doubles). `summary` may be NULL.
///
/// # Safety
/// Handles must be live and `actions` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn latco_plan(
    planner: *const LatcoPlanner,
    env: *const LatcoEnv,
    horizon: usize,
    seed: u64,
    actions: *mut f64,
    len: usize,
    summary: *mut LatcoPlanSummary,
) -> LatcoStatus {
    guard(|| {
        let planner = planner.as_ref().ok_or_else(|| null("planner"))?;
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let m = env.0.action_dim();
        let out = out_slice(actions, len, horizon * m, "actions")?;
        let (dynamics, reward) = (env.0.oracle_dynamics(), env.0.oracle_reward());
        let start: DVector<f64> = env.0.state();
        let problem = PlanProblem::new(dynamics.as_ref(), reward.as_ref(), &start, horizon, env.0.action_bound())
            .with_action_cost(env.0.action_cost());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = plan_with_restarts(planner.0.as_ref(), &problem, planner.0.restarts(), &mut rng)?;
        for (t, a) in plan.actions.iter().enumerate() {
            out[t * m..(t + 1) * m].copy_from_slice(a.as_slice());
        }
        if let Some(s) = summary.as_mut() {
            *s = LatcoPlanSummary {
                planned_return: plan.planned_return,
                max_violation: plan.max_violation,
                iterations: plan.diagnostics.len(),
            };
        }
        Ok(())
    })
}

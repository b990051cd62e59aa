use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use latco_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = latco_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(latco_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn env_round_trip_through_handles() {
    let mut env = ptr::null_mut();
    unsafe {
        assert_eq!(latco_env_new(c(r#"{"name": "lq", "z0": 0.5}"#).as_ptr(), &mut env), LatcoStatus::Ok);
        let (mut n, mut m, mut bound) = (0usize, 0usize, 0.0);
        assert_eq!(latco_env_dims(env, &mut n, &mut m, &mut bound), LatcoStatus::Ok);
        assert_eq!((n, m, bound), (1, 1, 1.0));
        let mut z = [0.0];
        assert_eq!(latco_env_reset(env, 0, z.as_mut_ptr(), 1), LatcoStatus::Ok);
        assert_eq!(z[0], 0.5);
        let (mut r, mut done) = (0.0, true);
        let a = [-0.25];
        assert_eq!(latco_env_step(env, a.as_ptr(), 1, z.as_mut_ptr(), 1, &mut r, &mut done), LatcoStatus::Ok);
        assert_eq!(z[0], 0.25);
        assert!((r - (-0.0625 - 0.01 * 0.0625)).abs() < 1e-15);
        assert!(!done);
        latco_env_free(env);
    }
}

#[test]
fn planning_matches_the_lq_optimum_sign_and_scale() {
    unsafe {
        let mut env = ptr::null_mut();
        assert_eq!(latco_env_new(c("\"lq\"").as_ptr(), &mut env), LatcoStatus::Ok);
        let mut z = [0.0];
        latco_env_reset(env, 0, z.as_mut_ptr(), 1);
        let mut planner = ptr::null_mut();
        assert_eq!(latco_planner_new(c("ilqr").as_ptr(), ptr::null(), &mut planner), LatcoStatus::Ok);
        let mut actions = [0.0; 10];
        let mut summary = LatcoPlanSummary::default();
        let status = latco_plan(planner, env, 10, 1, actions.as_mut_ptr(), actions.len(), &mut summary);
        assert_eq!(status, LatcoStatus::Ok);
        // Nearly the whole offset is removed in the first step.
        assert!((actions[0] + 0.297).abs() < 1e-3, "{actions:?}");
        assert!(summary.iterations > 0);
        assert!(summary.planned_return < 0.0);
        latco_planner_free(planner);
        latco_env_free(env);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut planner = ptr::null_mut();
        assert_eq!(latco_planner_new(c("foo").as_ptr(), ptr::null(), &mut planner), LatcoStatus::Config);
        assert!(planner.is_null());
        assert!(last_error().contains("foo"));

        let status = latco_planner_new(c("cem").as_ptr(), c(r#"{"elites": 0}"#).as_ptr(), &mut planner);
        assert_eq!(status, LatcoStatus::Config);
        assert!(last_error().contains("planner_config.elites"));

        assert_eq!(latco_env_new(ptr::null(), &mut ptr::null_mut()), LatcoStatus::NullPointer);

        let mut env = ptr::null_mut();
        latco_env_new(c("\"pointmass\"").as_ptr(), &mut env);
        let mut z = [0.0; 1];
        assert_eq!(latco_env_reset(env, 0, z.as_mut_ptr(), 1), LatcoStatus::BufferTooSmall);
        let mut z = [0.0; 2];
        latco_env_reset(env, 0, z.as_mut_ptr(), 2);
        let a = [0.0; 3];
        let (mut r, mut done) = (0.0, false);
        let status = latco_env_step(env, a.as_ptr(), 3, z.as_mut_ptr(), 2, &mut r, &mut done);
        assert_eq!(status, LatcoStatus::Dimension);
        latco_env_free(env);

        latco_clear_error();
        assert!(latco_last_error_message().is_null());
    }
}

#[test]
fn errors_are_thread_local() {
    unsafe {
        latco_planner_new(c("bar").as_ptr(), ptr::null(), &mut ptr::null_mut());
    }
    let other = std::thread::spawn(|| latco_last_error_message().is_null()).join().unwrap();
    assert!(other);
    assert!(last_error().contains("bar"));
}

#[test]
fn experiment_runs_and_writes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let json = r#"{"env": "lq", "planner": "ilqr", "mpc": {"horizon": 10, "replan": 10, "episode_steps": 10}}"#;
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(latco_experiment_parse(c(json).as_ptr(), &mut cfg), LatcoStatus::Ok);
        let out = c(tmp.path().to_str().unwrap());
        assert_eq!(latco_experiment_run(cfg, LatcoCommand::Plan, out.as_ptr()), LatcoStatus::Ok);
        latco_experiment_free(cfg);
        assert_eq!(latco_experiment_parse(c(r#"{"planner": "foo"}"#).as_ptr(), &mut cfg), LatcoStatus::Config);
    }
    assert!(tmp.path().join("manifest.json").is_file());
    assert!(tmp.path().join("plan.csv").is_file());
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        latco_env_free(ptr::null_mut());
        latco_planner_free(ptr::null_mut());
        latco_experiment_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("latco.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["latco_plan", "latco_env_step", "latco_last_error_message", "LATCO_STATUS_BUFFER_TOO_SMALL"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "latco.h"
int run(void) {
    LatcoEnv *env = NULL;
    LatcoPlanner *p = NULL;
    double actions[10];
    LatcoPlanSummary s;
    if (latco_env_new("\"lq\"", &env) != LATCO_STATUS_OK) return 1;
    if (latco_planner_new("latco", NULL, &p) != LATCO_STATUS_OK) return 2;
    LatcoStatus st = latco_plan(p, env, 10, 7, actions, 10, &s);
    latco_planner_free(p);
    latco_env_free(env);
    return st == LATCO_STATUS_OK ? 0 : 3;
}
"#,
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "C compiler rejected the header"),
        Err(e) => eprintln!("no C compiler available ({e}); header syntax not checked"),
    }
}

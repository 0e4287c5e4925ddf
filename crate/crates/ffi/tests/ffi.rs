use std::ffi::{c_char, c_int, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use micro_core::agent::{Agent, AgentConfig};
use micro_core::data::NormStats;
use micro_core::envs::{EnvPerturbation, Pendulum, PendulumParams};
use micro_core::rng::rng_from_seed;
use micro_core::robust_eval::evaluate;
use micro_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe {
        micro_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn small_agent() -> Agent {
    let config = AgentConfig { hidden_units: 16, ..AgentConfig::default() };
    let stats =
        NormStats { obs_mean: vec![0.1, -0.2, 0.3], obs_std: vec![0.9, 1.1, 2.0], act_mean: None, act_std: None };
    Agent::new(3, 1, 2.0, stats, &config, 4).unwrap()
}

fn saved_agent(dir: &Path) -> (Agent, CString) {
    let agent = small_agent();
    let path = dir.join("agent.ckpt");
    agent.to_checkpoint().save(&path).unwrap();
    (agent, CString::new(path.to_str().unwrap()).unwrap())
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(micro_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn last_error_truncates_and_reports_length() {
    let status = unsafe { micro_w1_distance(ptr::null(), ptr::null(), 2, ptr::null_mut()) };
    assert_eq!(status, MicroStatus::NullPointer);
    assert_eq!(last_error(), "out is null");
    let mut small = [1 as c_char; 4];
    let n = unsafe { micro_last_error(small.as_mut_ptr(), small.len()) };
    assert_eq!(n, "out is null".len());
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_str().unwrap(), "out");
    assert_eq!(unsafe { micro_last_error(ptr::null_mut(), 0) }, n);
}

#[test]
fn agent_round_trip_through_the_handle() {
    let dir = tempfile::tempdir().unwrap();
    let (agent, path) = saved_agent(dir.path());
    let mut handle: *mut MicroAgent = ptr::null_mut();
    assert_eq!(unsafe { micro_agent_load(path.as_ptr(), &mut handle) }, MicroStatus::Ok);
    assert_eq!(unsafe { (micro_agent_obs_dim(handle), micro_agent_act_dim(handle)) }, (3, 1));

    let obs = [0.3, -0.95, 1.7];
    let mut act = [0.0];
    assert_eq!(unsafe { micro_agent_act(handle, obs.as_ptr(), 3, act.as_mut_ptr(), 1) }, MicroStatus::Ok);
    assert_eq!(act.to_vec(), agent.act(&obs).unwrap());

    assert_eq!(unsafe { micro_agent_act(handle, obs.as_ptr(), 2, act.as_mut_ptr(), 1) }, MicroStatus::InvalidArgument);
    assert_eq!(unsafe { micro_agent_act(handle, obs.as_ptr(), 3, act.as_mut_ptr(), 0) }, MicroStatus::BufferTooSmall);

    let (mut mean, mut std) = (0.0, 0.0);
    assert_eq!(unsafe { micro_agent_evaluate(handle, 2.0, 0.5, 2, 9, &mut mean, &mut std) }, MicroStatus::Ok);
    let env = PendulumParams::default().perturbed(EnvPerturbation::new(2.0, 0.5).unwrap());
    let expected = evaluate(&agent.policy, &agent.stats, env, 2, 9).unwrap();
    assert_eq!((mean, std), (expected.mean, expected.std));
    assert_eq!(
        unsafe { micro_agent_evaluate(handle, 9.0, 1.0, 2, 9, &mut mean, &mut std) },
        MicroStatus::InvalidArgument
    );

    unsafe { micro_agent_free(handle) };
    unsafe { micro_agent_free(ptr::null_mut()) };
    assert_eq!(unsafe { micro_agent_obs_dim(ptr::null()) }, 0);
}

#[test]
fn agent_load_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    let mut handle: *mut MicroAgent = ptr::null_mut();
    assert_eq!(unsafe { micro_agent_load(missing.as_ptr(), &mut handle) }, MicroStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("none.ckpt"));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, "not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { micro_agent_load(junk.as_ptr(), &mut handle) }, MicroStatus::InvalidArgument);
    assert_eq!(unsafe { micro_agent_load(ptr::null(), &mut handle) }, MicroStatus::NullPointer);
}

#[test]
fn pendulum_handle_matches_the_library() {
    let mut env: *mut MicroPendulum = ptr::null_mut();
    assert_eq!(unsafe { micro_pendulum_new(1.5, 0.75, &mut env) }, MicroStatus::Ok);
    let mut reference = Pendulum::new(PendulumParams::default().perturbed(EnvPerturbation::new(1.5, 0.75).unwrap()));

    let mut obs = [0.0; 3];
    assert_eq!(unsafe { micro_pendulum_reset(env, 5, obs.as_mut_ptr(), 3) }, MicroStatus::Ok);
    assert_eq!(obs.to_vec(), reference.reset(&mut rng_from_seed(5)));

    let (mut reward, mut done): (f64, c_int) = (0.0, 0);
    let mut steps = 0;
    while done == 0 {
        let a = [((steps % 7) as f64 - 3.0) * 0.5];
        assert_eq!(
            unsafe { micro_pendulum_step(env, a.as_ptr(), 1, obs.as_mut_ptr(), 3, &mut reward, &mut done) },
            MicroStatus::Ok
        );
        let r = reference.step(&a).unwrap();
        assert_eq!((obs.to_vec(), reward), (r.obs, r.reward));
        steps += 1;
    }
    assert_eq!(steps, PendulumParams::default().horizon);

    let nan = [f64::NAN];
    assert_ne!(
        unsafe { micro_pendulum_step(env, nan.as_ptr(), 1, obs.as_mut_ptr(), 3, &mut reward, &mut done) },
        MicroStatus::Ok
    );
    assert_eq!(unsafe { micro_pendulum_reset(env, 5, obs.as_mut_ptr(), 2) }, MicroStatus::BufferTooSmall);
    unsafe { micro_pendulum_free(env) };
    assert_eq!((micro_pendulum_obs_dim(), micro_pendulum_act_dim()), (3, 1));

    let mut bad: *mut MicroPendulum = ptr::null_mut();
    assert_eq!(unsafe { micro_pendulum_new(0.0, 1.0, &mut bad) }, MicroStatus::InvalidArgument);
}

#[test]
fn scalar_helpers() {
    let (p, q) = ([1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]);
    let mut w = 0.0;
    assert_eq!(unsafe { micro_w1_distance(p.as_ptr(), q.as_ptr(), 4, &mut w) }, MicroStatus::Ok);
    assert_eq!(w, 3.0);
    let bad = [0.5, 0.6, 0.0, 0.0];
    assert_eq!(unsafe { micro_w1_distance(bad.as_ptr(), q.as_ptr(), 4, &mut w) }, MicroStatus::InvalidArgument);

    let mut s = 0.0;
    assert_eq!(unsafe { micro_normalized_score(-300.0, -300.0, -100.0, &mut s) }, MicroStatus::Ok);
    assert_eq!(s, 0.0);
    assert_eq!(unsafe { micro_normalized_score(-100.0, -300.0, -100.0, &mut s) }, MicroStatus::Ok);
    assert_eq!(s, 100.0);
    assert_eq!(unsafe { micro_normalized_score(1.0, 5.0, 5.0, &mut s) }, MicroStatus::InvalidArgument);
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/tabular")
}

#[test]
fn tabular_suite_through_the_c_interface() {
    let dir = CString::new(fixture_dir().to_str().unwrap()).unwrap();
    let mut passed: c_int = -1;
    assert_eq!(unsafe { micro_verify_tabular(dir.as_ptr(), 50, 0, &mut passed) }, MicroStatus::Ok);
    assert_eq!(passed, 1);

    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture_dir().join("chain3.toml")).unwrap();
    std::fs::write(tmp.path().join("chain3.toml"), text.replacen("gamma = 0.9", "gamma = 1.5", 1)).unwrap();
    let bad = CString::new(tmp.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { micro_verify_tabular(bad.as_ptr(), 50, 0, &mut passed) }, MicroStatus::Ok);
    assert_eq!(passed, 0);
    assert!(last_error().contains("chain3.toml"));

    let empty = tempfile::tempdir().unwrap();
    let empty = CString::new(empty.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { micro_verify_tabular(empty.as_ptr(), 50, 0, &mut passed) }, MicroStatus::InvalidArgument);
}

/// Compiles and runs a C program against the generated header and the
/// static library.
#[test]
fn c_program_links_against_the_header() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(header_dir.join("micro.h").exists());
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("libmicro_ffi.a");
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("probe.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "micro.h"
int main(void) {
    double p[3] = {0.5, 0.5, 0.0}, q[3] = {0.0, 0.5, 0.5}, w = -1.0;
    if (micro_w1_distance(p, q, 3, &w) != MICRO_STATUS_OK) return 1;
    MicroPendulum *env = NULL;
    if (micro_pendulum_new(1.0, 1.0, &env) != MICRO_STATUS_OK) return 2;
    double obs[3];
    if (micro_pendulum_reset(env, 1, obs, 3) != MICRO_STATUS_OK) return 3;
    micro_pendulum_free(env);
    if (micro_pendulum_new(-1.0, 1.0, &env) != MICRO_STATUS_INVALID_ARGUMENT) return 4;
    char msg[256];
    micro_last_error(msg, sizeof msg);
    printf("%s %.3f %s\n", micro_version(), w, msg);
    return 0;
}
"#,
    )
    .unwrap();
    let include = format!("-I{}", header_dir.display());
    if !lib.exists() {
        let status = Command::new(&cc).args(["-fsyntax-only", &include]).arg(&src).status().unwrap();
        assert!(status.success());
        eprintln!("{} not built; checked syntax only", lib.display());
        return;
    }
    let bin = tmp.path().join("probe");
    let status = Command::new(&cc)
        .arg(&src)
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{:?}", out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with(&format!("{} 1.000 ", env!("CARGO_PKG_VERSION"))), "{stdout}");
    assert!(stdout.contains("gravity"), "{stdout}");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}

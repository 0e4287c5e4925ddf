//! C interface to `micro-core`.
//!
//! Every fallible function returns a [`MicroStatus`]; on failure the message
//! is kept per thread and read with [`micro_last_error`]. Handles are opaque
//! and owned by the caller, who releases them with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use micro_core::agent::Agent;
use micro_core::envs::pendulum::{ACT_DIM, OBS_DIM};
use micro_core::envs::{EnvPerturbation, Pendulum, PendulumParams};
use micro_core::ndmath::Checkpoint;
use micro_core::rng::rng_from_seed;
use micro_core::robust_eval::{evaluate, normalized_score, ScoreRefs};
use micro_core::tabular::{fixture_paths, verify_fixtures, w1_distance, VerifyOptions};
use micro_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicroStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Runtime = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// A trained agent loaded from a checkpoint.
pub struct MicroAgent {
    agent: Agent,
}

/// A pendulum instance.
pub struct MicroPendulum {
    env: Pendulum,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(MicroStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => MicroStatus::Io,
            e if e.is_validation() => MicroStatus::InvalidArgument,
            _ => MicroStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MicroStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MicroStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside micro".into());
            MicroStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(MicroStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len < need {
        return Err(Failure(MicroStatus::BufferTooSmall, format!("{what} holds {len} values, {need} needed")));
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn writable<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn cpath(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MicroStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn micro_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the message length in
/// bytes, excluding the terminator.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn micro_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads an agent checkpoint written by `micro train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn micro_agent_load(path: *const c_char, out: *mut *mut MicroAgent) -> MicroStatus {
    guard(|| {
        let out = writable(out, "out")?;
        let c = Checkpoint::load(cpath(path, "path")?)?;
        *out = Box::into_raw(Box::new(MicroAgent { agent: Agent::from_checkpoint(&c)? }));
        Ok(())
    })
}

/// # Safety
/// `agent` must come from [`micro_agent_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn micro_agent_free(agent: *mut MicroAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Observation width the agent expects, or 0 for a null handle.
///
/// # Safety
/// `agent` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn micro_agent_obs_dim(agent: *const MicroAgent) -> usize {
    agent.as_ref().map_or(0, |a| a.agent.policy.obs_dim())
}

/// # Safety
/// `agent` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn micro_agent_act_dim(agent: *const MicroAgent) -> usize {
    agent.as_ref().map_or(0, |a| a.agent.policy.act_dim)
}

/// Deterministic action for a raw (unnormalized) observation.
///
/// # Safety
/// `obs` must hold `obs_len` values and `action` room for `action_len`.
#[no_mangle]
pub unsafe extern "C" fn micro_agent_act(
    agent: *const MicroAgent,
    obs: *const f64,
    obs_len: usize,
    action: *mut f64,
    action_len: usize,
) -> MicroStatus {
    guard(|| {
        let a = &agent.as_ref().ok_or_else(|| null("agent"))?.agent;
        let obs = slice(obs, obs_len, "obs")?;
        if obs.len() != a.policy.obs_dim() {
            return Err(Failure(
                MicroStatus::InvalidArgument,
                format!("observation has {} values, agent expects {}", obs.len(), a.policy.obs_dim()),
            ));
        }
        let dst = slice_mut(action, action_len, a.policy.act_dim, "action")?;
        dst[..a.policy.act_dim].copy_from_slice(&a.act(obs)?);
        Ok(())
    })
}

/// Mean and standard deviation of the deterministic policy's return on the
/// pendulum with the given gravity and friction multipliers.
///
/// # Safety
/// `mean` and `std` must be writable.
#[no_mangle]
pub unsafe extern "C" fn micro_agent_evaluate(
    agent: *const MicroAgent,
    gravity_mult: f64,
    friction_mult: f64,
    episodes: usize,
    seed: u64,
    mean: *mut f64,
    std: *mut f64,
) -> MicroStatus {
    guard(|| {
        let a = &agent.as_ref().ok_or_else(|| null("agent"))?.agent;
        let (mean, std) = (writable(mean, "mean")?, writable(std, "std")?);
        let env = PendulumParams::default().perturbed(EnvPerturbation::new(gravity_mult, friction_mult)?);
        let r = evaluate(&a.policy, &a.stats, env, episodes, seed)?;
        (*mean, *std) = (r.mean, r.std);
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn micro_pendulum_new(
    gravity_mult: f64,
    friction_mult: f64,
    out: *mut *mut MicroPendulum,
) -> MicroStatus {
    guard(|| {
        let out = writable(out, "out")?;
        let params = PendulumParams::default().perturbed(EnvPerturbation::new(gravity_mult, friction_mult)?);
        *out = Box::into_raw(Box::new(MicroPendulum { env: Pendulum::new(params) }));
        Ok(())
    })
}

/// # Safety
/// `env` must come from [`micro_pendulum_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn micro_pendulum_free(env: *mut MicroPendulum) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Number of observation values the pendulum produces.
#[no_mangle]
pub extern "C" fn micro_pendulum_obs_dim() -> usize {
    OBS_DIM
}

#[no_mangle]
pub extern "C" fn micro_pendulum_act_dim() -> usize {
    ACT_DIM
}

/// Random start state drawn from `seed`; writes the first observation.
///
/// # Safety
/// `obs` must have room for `obs_len` values.
#[no_mangle]
pub unsafe extern "C" fn micro_pendulum_reset(
    env: *mut MicroPendulum,
    seed: u64,
    obs: *mut f64,
    obs_len: usize,
) -> MicroStatus {
    guard(|| {
        let p = env.as_mut().ok_or_else(|| null("env"))?;
        let dst = slice_mut(obs, obs_len, OBS_DIM, "obs")?;
        let o = p.env.reset(&mut rng_from_seed(seed));
        dst[..OBS_DIM].copy_from_slice(&o);
        Ok(())
    })
}

/// Advances one step. `done` becomes 1 when the episode ended (terminal or
/// out of time).
///
/// # Safety
/// Pointers must be valid for the given lengths; `reward` and `done` writable.
#[no_mangle]
pub unsafe extern "C" fn micro_pendulum_step(
    env: *mut MicroPendulum,
    action: *const f64,
    action_len: usize,
    obs: *mut f64,
    obs_len: usize,
    reward: *mut f64,
    done: *mut c_int,
) -> MicroStatus {
    guard(|| {
        let p = env.as_mut().ok_or_else(|| null("env"))?;
        let a = slice(action, action_len, "action")?;
        let dst = slice_mut(obs, obs_len, OBS_DIM, "obs")?;
        let (reward, done) = (writable(reward, "reward")?, writable(done, "done")?);
        let step = p.env.step(a)?;
        dst[..OBS_DIM].copy_from_slice(&step.obs);
        *reward = step.reward;
        *done = c_int::from(step.terminal || step.truncated);
        Ok(())
    })
}

/// W1 distance of two distributions on the states `0..n` of a line.
///
/// # Safety
/// `p` and `q` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn micro_w1_distance(p: *const f64, q: *const f64, n: usize, out: *mut f64) -> MicroStatus {
    guard(|| {
        let out = writable(out, "out")?;
        *out = w1_distance(slice(p, n, "p")?, slice(q, n, "q")?)?;
        Ok(())
    })
}

/// `100·(score − random)/(expert − random)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn micro_normalized_score(score: f64, random: f64, expert: f64, out: *mut f64) -> MicroStatus {
    guard(|| {
        let out = writable(out, "out")?;
        *out = normalized_score(score, &ScoreRefs::new(random, expert)?)?;
        Ok(())
    })
}

/// Runs the tabular property suite on every fixture of `dir`. `pairs = 0`
/// keeps the default pair count. `passed` becomes 1 when every fixture
/// passed; failures are described by [`micro_last_error`] while the call
/// still returns `MICRO_STATUS_OK`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `passed` writable.
#[no_mangle]
pub unsafe extern "C" fn micro_verify_tabular(
    dir: *const c_char,
    pairs: usize,
    seed: u64,
    passed: *mut c_int,
) -> MicroStatus {
    guard(|| {
        let passed = writable(passed, "passed")?;
        let mut opts = VerifyOptions { seed, ..VerifyOptions::default() };
        if pairs > 0 {
            opts.pairs = pairs;
        }
        let report = verify_fixtures(&fixture_paths(cpath(dir, "dir")?)?, &opts)?;
        *passed = c_int::from(report.passed());
        if !report.passed() {
            set_error(format!("failing fixtures: {}", report.failing().join(", ")));
        }
        Ok(())
    })
}

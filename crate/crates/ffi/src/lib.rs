//! C ABI over `clf_rl`.
//!
//! Objects are opaque heap handles created by `*_new`/`*_load` and released
//! by the matching `*_free`. Every function returns a `ClfStatus`; on failure
//! `clf_last_error_message` describes the error raised on the calling thread.
//! Output buffers are caller-owned; when `cap` is too small the call fails
//! with `CLF_BUFFER_TOO_SMALL` and writes the required length to `out_len`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use clf_rl::clf_reward::{self, CareWeights, OutputError};
use clf_rl::config::ExperimentConfig;
use clf_rl::env::Env;
use clf_rl::gait_library::GaitLibrary;
use clf_rl::hlip::{self, HlipParams};
use clf_rl::reference::Parity;
use clf_rl::trainer::{Checkpoint, GaussianPolicy};
use clf_rl::Error;

pub type ClfStatus = i32;

pub const CLF_OK: ClfStatus = 0;
pub const CLF_NULL_POINTER: ClfStatus = 1;
pub const CLF_INVALID_ARGUMENT: ClfStatus = 2;
pub const CLF_DIMENSION_MISMATCH: ClfStatus = 3;
pub const CLF_IO_ERROR: ClfStatus = 4;
pub const CLF_PARSE_ERROR: ClfStatus = 5;
pub const CLF_NUMERICAL_ERROR: ClfStatus = 6;
pub const CLF_BUFFER_TOO_SMALL: ClfStatus = 7;
pub const CLF_PANIC: ClfStatus = 99;

/// CLF bundle: per-output CARE blocks and reward normalizers.
pub struct ClfBundle(clf_reward::ClfBundle);
pub struct ClfGaitLibrary(GaitLibrary);
pub struct ClfEnv(Env);
/// Deterministic (mean) policy restored from a checkpoint.
pub struct ClfPolicy(GaussianPolicy);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Fail(ClfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Dimension { .. } => CLF_DIMENSION_MISMATCH,
            Error::Io { .. } => CLF_IO_ERROR,
            Error::Json(_) | Error::Toml(_) | Error::Csv(_) | Error::Checkpoint(_) | Error::Library(_) => {
                CLF_PARSE_ERROR
            }
            Error::NonFinite(_) | Error::Degenerate(_) | Error::NotStabilizable(_) => CLF_NUMERICAL_ERROR,
            _ => CLF_INVALID_ARGUMENT,
        };
        Fail(code, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CLF_NULL_POINTER, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ClfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CLF_OK,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CLF_PANIC
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn c_str(p: *const c_char, what: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail(CLF_INVALID_ARGUMENT, format!("{what} is not valid UTF-8")))
}

unsafe fn write_out(values: &[f64], out: *mut f64, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    if !out_len.is_null() {
        *out_len = values.len();
    }
    if values.len() > cap {
        return Err(Fail(
            CLF_BUFFER_TOO_SMALL,
            format!("buffer holds {cap} values, {} needed", values.len()),
        ));
    }
    if !values.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    *as_mut(out, what)? = value;
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("handle output"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free_handle<T>(h: *mut T) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `cap` bytes. Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn clf_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Closed-form 2×2 CARE solution, written row-major to `out_p[4]`.
///
/// # Safety
/// `out_p` must point to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn clf_care_2x2(q_pos: f64, q_vel: f64, r: f64, out_p: *mut f64) -> ClfStatus {
    guard(|| {
        let p = clf_reward::care_2x2(q_pos, q_vel, r)?;
        write_out(&[p[0][0], p[0][1], p[1][0], p[1][1]], out_p, 4, ptr::null_mut())
    })
}

/// Builds a bundle from `n` per-output weights.
///
/// # Safety
/// The weight arrays must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clf_bundle_new(
    q_pos: *const f64,
    q_vel: *const f64,
    r: *const f64,
    n: usize,
    lambda: f64,
    eta_max: f64,
    eta_dot_max: f64,
    out: *mut *mut ClfBundle,
) -> ClfStatus {
    guard(|| {
        let (qp, qv, rr) = (slice(q_pos, n, "q_pos")?, slice(q_vel, n, "q_vel")?, slice(r, n, "r")?);
        let channels: Vec<CareWeights> = (0..n)
            .map(|i| CareWeights {
                q_pos: qp[i],
                q_vel: qv[i],
                r: rr[i],
            })
            .collect();
        let b = clf_reward::build_bundle(&channels, lambda, eta_max, eta_dot_max)?;
        put_handle(out, ClfBundle(b))
    })
}

/// # Safety
/// `bundle` must be null or a handle from `clf_bundle_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clf_bundle_free(bundle: *mut ClfBundle) {
    free_handle(bundle)
}

/// `V = Σ_i η_iᵀ P_i η_i` for errors `e_pos[n]`, `e_vel[n]`.
///
/// # Safety
/// `bundle` must be a live handle; arrays must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn clf_bundle_lyapunov(
    bundle: *const ClfBundle,
    e_pos: *const f64,
    e_vel: *const f64,
    n: usize,
    out_v: *mut f64,
) -> ClfStatus {
    guard(|| {
        let b = as_ref(bundle, "bundle")?;
        let eta = OutputError::new(slice(e_pos, n, "e_pos")?.to_vec(), slice(e_vel, n, "e_vel")?.to_vec())?;
        put(out_v, clf_reward::lyapunov(&eta, &b.0)?, "out_v")
    })
}

/// Reward normalizers and the certified decay rate of the LQR closed loop.
///
/// # Safety
/// `bundle` must be a live handle; outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn clf_bundle_constants(
    bundle: *const ClfBundle,
    out_mu_max: *mut f64,
    out_sigma_v: *mut f64,
    out_sigma_vdot: *mut f64,
    out_decay_rate: *mut f64,
) -> ClfStatus {
    guard(|| {
        let b = &as_ref(bundle, "bundle")?.0;
        for (p, v) in [
            (out_mu_max, b.mu_max()),
            (out_sigma_v, b.sigma_v()),
            (out_sigma_vdot, b.sigma_vdot()),
            (out_decay_rate, b.certified_decay_rate()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// `w · tanh(−(V̇ + λV))`
///
/// # Safety
/// `bundle` must be a live handle; `out_r` writable.
#[no_mangle]
pub unsafe extern "C" fn clf_reward_decay_tanh(
    bundle: *const ClfBundle,
    v: f64,
    vdot: f64,
    w: f64,
    out_r: *mut f64,
) -> ClfStatus {
    guard(|| {
        let b = as_ref(bundle, "bundle")?;
        put(out_r, clf_reward::reward_clf_decay_tanh(v, vdot, &b.0, w), "out_r")
    })
}

/// H-LIP period-one orbit: pre-impact state `(p*, v*)` and step length `u*`.
///
/// # Safety
/// Outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn clf_hlip_fixed_point(
    com_height: f64,
    gravity: f64,
    t_ssp: f64,
    t_dsp: f64,
    v_desired: f64,
    out_p: *mut f64,
    out_v: *mut f64,
    out_u: *mut f64,
) -> ClfStatus {
    guard(|| {
        let params = HlipParams {
            com_height,
            gravity,
            t_ssp,
            t_dsp,
        };
        params.validate()?;
        let fp = hlip::fixed_point(v_desired, &params)?;
        put(out_p, fp.x_star.p, "out_p")?;
        put(out_v, fp.x_star.v, "out_v")?;
        put(out_u, fp.u_star, "out_u")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clf_gait_library_load(path: *const c_char, out: *mut *mut ClfGaitLibrary) -> ClfStatus {
    guard(|| {
        let lib = GaitLibrary::load(PathBuf::from(c_str(path, "path")?))?;
        put_handle(out, ClfGaitLibrary(lib))
    })
}

/// # Safety
/// `lib` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clf_gait_library_free(lib: *mut ClfGaitLibrary) {
    free_handle(lib)
}

/// Number of entries and stacked output dimension.
///
/// # Safety
/// `lib` must be a live handle; outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn clf_gait_library_info(
    lib: *const ClfGaitLibrary,
    out_entries: *mut usize,
    out_output_dim: *mut usize,
) -> ClfStatus {
    guard(|| {
        let l = &as_ref(lib, "library")?.0;
        if !out_entries.is_null() {
            *out_entries = l.entries().len();
        }
        if !out_output_dim.is_null() {
            *out_output_dim = l.channels().iter().map(|c| c.dim).sum();
        }
        Ok(())
    })
}

/// Reference of the entry nearest `v_desired` at time `t`; step 0 has odd
/// stance parity when `odd_start` is nonzero.
///
/// # Safety
/// `lib` must be a live handle; `y` and `ydot` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn clf_gait_library_reference(
    lib: *const ClfGaitLibrary,
    v_desired: f64,
    t: f64,
    odd_start: i32,
    y: *mut f64,
    ydot: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> ClfStatus {
    guard(|| {
        let l = &as_ref(lib, "library")?.0;
        let parity = if odd_start != 0 { Parity::Odd } else { Parity::Even };
        let f = l.select(v_desired)?.reference_at(t, parity)?;
        write_out(&f.y, y, cap, out_len)?;
        write_out(&f.ydot, ydot, cap, out_len)
    })
}

/// Environment from an experiment config in TOML (empty string for defaults).
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clf_env_new(config_toml: *const c_char, out: *mut *mut ClfEnv) -> ClfStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_toml_str(&c_str(config_toml, "config_toml")?)?;
        let env = Env::new(cfg.env, &cfg.clf, cfg.weights, cfg.variant)?;
        put_handle(out, ClfEnv(env))
    })
}

/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clf_env_free(env: *mut ClfEnv) {
    free_handle(env)
}

/// # Safety
/// `env` must be a live handle; outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn clf_env_dims(
    env: *const ClfEnv,
    out_obs: *mut usize,
    out_priv: *mut usize,
    out_action: *mut usize,
) -> ClfStatus {
    guard(|| {
        let e = &as_ref(env, "env")?.0;
        for (p, v) in [(out_obs, e.obs_dim()), (out_priv, e.priv_dim()), (out_action, e.action_dim())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Starts an episode and writes the policy observation.
///
/// # Safety
/// `env` must be a live handle; `obs` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn clf_env_reset(
    env: *mut ClfEnv,
    seed: u64,
    command: f64,
    obs: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> ClfStatus {
    guard(|| {
        let e = &mut as_mut(env, "env")?.0;
        let (o, _) = e.reset(seed, command)?;
        write_out(&o.values, obs, cap, out_len)
    })
}

/// Advances one control tick. `out_done` is set to 1 when the episode ended.
///
/// # Safety
/// `env` must be a live handle; `action` must hold `action_len` doubles and
/// `obs` `cap` doubles; scalar outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn clf_env_step(
    env: *mut ClfEnv,
    action: *const f64,
    action_len: usize,
    obs: *mut f64,
    cap: usize,
    out_reward: *mut f64,
    out_lyapunov: *mut f64,
    out_done: *mut i32,
) -> ClfStatus {
    guard(|| {
        let e = &mut as_mut(env, "env")?.0;
        let r = e.step(slice(action, action_len, "action")?)?;
        write_out(&r.obs.values, obs, cap, ptr::null_mut())?;
        if !out_reward.is_null() {
            *out_reward = r.reward.total;
        }
        if !out_lyapunov.is_null() {
            *out_lyapunov = r.info.lyapunov;
        }
        if !out_done.is_null() {
            *out_done = r.done as i32;
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clf_policy_load(path: *const c_char, out: *mut *mut ClfPolicy) -> ClfStatus {
    guard(|| {
        let ckpt = Checkpoint::load(PathBuf::from(c_str(path, "path")?))?;
        put_handle(out, ClfPolicy(ckpt.policy.actor))
    })
}

/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clf_policy_free(policy: *mut ClfPolicy) {
    free_handle(policy)
}

/// Mean action for an observation.
///
/// # Safety
/// `policy` must be a live handle; `obs` must hold `obs_len` doubles and
/// `action` `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn clf_policy_act(
    policy: *const ClfPolicy,
    obs: *const f64,
    obs_len: usize,
    action: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> ClfStatus {
    guard(|| {
        let p = &as_ref(policy, "policy")?.0;
        let a = p.mean_action(slice(obs, obs_len, "obs")?)?;
        write_out(&a, action, cap, out_len)
    })
}

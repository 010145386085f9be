//! C ABI over the `vaoi` library.
//!
//! All objects are opaque heap handles created by `vaoi_*_new` / `vaoi_solve`
//! and released with the matching `vaoi_*_free`. Every fallible function
//! returns a [`VaoiStatus`]; on failure `vaoi_last_error_message` holds a
//! description for the calling thread. Outputs are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vaoi::sim::{monte_carlo_eval, McSettings};
use vaoi::solver::{rvia_solve_kernel, Kernel};
use vaoi::{evaluate_chain, greedy_policy, Action, Error, Policy, RviaSettings, State, SystemParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VaoiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    StateOutOfRange = 3,
    InfeasibleAction = 4,
    NotConverged = 5,
    PolicyShape = 6,
    SingularChain = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VaoiAction {
    Idle = 0,
    Transmit = 1,
}

/// Validated system parameters.
pub struct VaoiParams {
    params: SystemParams,
    kernel: Kernel,
}

/// Result of relative value iteration.
pub struct VaoiSolution {
    policy: Policy,
    avg_cost: f64,
    iterations: usize,
    span_residual: f64,
    values: Vec<f64>,
}

/// Deterministic stationary policy over the (delta, b) grid.
pub struct VaoiPolicy {
    policy: Policy,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> VaoiStatus {
    match e {
        Error::InvalidParameter { .. } | Error::Config(_) => VaoiStatus::InvalidParameter,
        Error::StateOutOfRange(_) => VaoiStatus::StateOutOfRange,
        Error::InfeasibleAction(_) => VaoiStatus::InfeasibleAction,
        Error::NotConverged { .. } => VaoiStatus::NotConverged,
        Error::PolicyShape { .. } => VaoiStatus::PolicyShape,
        Error::SingularChain => VaoiStatus::SingularChain,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => VaoiStatus::Internal,
    }
}

struct Fail(VaoiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(VaoiStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> VaoiStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            VaoiStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside vaoi".into());
            VaoiStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(p: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

fn check_out<T>(p: *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(null(what))
    } else {
        Ok(())
    }
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn vaoi_status_string(status: VaoiStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        VaoiStatus::Ok => b"ok\0",
        VaoiStatus::NullPointer => b"null pointer\0",
        VaoiStatus::InvalidParameter => b"invalid parameter\0",
        VaoiStatus::StateOutOfRange => b"state out of range\0",
        VaoiStatus::InfeasibleAction => b"infeasible action\0",
        VaoiStatus::NotConverged => b"not converged\0",
        VaoiStatus::PolicyShape => b"policy shape mismatch\0",
        VaoiStatus::SingularChain => b"singular chain\0",
        VaoiStatus::BufferTooSmall => b"buffer too small\0",
        VaoiStatus::Internal => b"internal error\0",
    };
    s.as_ptr().cast()
}

/// Message for the last failed call on this thread, empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn vaoi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn vaoi_params_new(
    p_g: f64,
    p_s: f64,
    beta: f64,
    battery_capacity: u32,
    delta_max: u32,
    out: *mut *mut VaoiParams,
) -> VaoiStatus {
    guard(|| {
        check_out(out, "out")?;
        let params = SystemParams::new(p_g, p_s, beta, battery_capacity, delta_max)?;
        let kernel = Kernel::new(&params)?;
        write(out, Box::into_raw(Box::new(VaoiParams { params, kernel })), "out")
    })
}

/// # Safety
/// `params` must be null or a handle from `vaoi_params_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vaoi_params_free(params: *mut VaoiParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vaoi_params_num_states(params: *const VaoiParams, out: *mut usize) -> VaoiStatus {
    guard(|| {
        let p = deref(params, "params")?;
        write(out, p.params.shape().num_states(), "out")
    })
}

/// Runs relative value iteration. `tol <= 0` or `max_iter == 0` select the
/// library defaults.
///
/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vaoi_solve(
    params: *const VaoiParams,
    tol: f64,
    max_iter: usize,
    out: *mut *mut VaoiSolution,
) -> VaoiStatus {
    guard(|| {
        let p = deref(params, "params")?;
        check_out(out, "out")?;
        let mut settings = RviaSettings::default();
        if tol > 0.0 {
            settings.tol = tol;
        }
        if max_iter > 0 {
            settings.max_iter = max_iter;
        }
        let r = rvia_solve_kernel(&p.kernel, &settings)?;
        let solution = VaoiSolution {
            avg_cost: r.avg_cost,
            iterations: r.iterations,
            span_residual: r.span_residual,
            values: r.value.values().to_vec(),
            policy: r.policy,
        };
        write(out, Box::into_raw(Box::new(solution)), "out")
    })
}

/// # Safety
/// `solution` must be null or a handle from `vaoi_solve` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vaoi_solution_free(solution: *mut VaoiSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// # Safety
/// `solution` must be a live handle; each non-null output must be writable.
#[no_mangle]
pub unsafe extern "C" fn vaoi_solution_summary(
    solution: *const VaoiSolution,
    avg_cost: *mut f64,
    iterations: *mut usize,
    span_residual: *mut f64,
) -> VaoiStatus {
    guard(|| {
        let s = deref(solution, "solution")?;
        if !avg_cost.is_null() {
            avg_cost.write(s.avg_cost);
        }
        if !iterations.is_null() {
            iterations.write(s.iterations);
        }
        if !span_residual.is_null() {
            span_residual.write(s.span_residual);
        }
        Ok(())
    })
}

/// Copies the relative value function (delta-major order) into `buf`.
/// With `buf == NULL` only the required length is reported in `len_out`.
///
/// # Safety
/// `solution` must be a live handle, `buf` null or valid for `len` doubles,
/// and `len_out` writable.
#[no_mangle]
pub unsafe extern "C" fn vaoi_solution_values(
    solution: *const VaoiSolution,
    buf: *mut f64,
    len: usize,
    len_out: *mut usize,
) -> VaoiStatus {
    guard(|| {
        let s = deref(solution, "solution")?;
        write(len_out, s.values.len(), "len_out")?;
        if buf.is_null() {
            return Ok(());
        }
        if len < s.values.len() {
            return Err(Fail(
                VaoiStatus::BufferTooSmall,
                format!("need {} doubles, got {len}", s.values.len()),
            ));
        }
        ptr::copy_nonoverlapping(s.values.as_ptr(), buf, s.values.len());
        Ok(())
    })
}

/// Extracts an independent copy of the optimal policy.
///
/// # Safety
/// `solution` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vaoi_solution_policy(solution: *const VaoiSolution, out: *mut *mut VaoiPolicy) -> VaoiStatus {
    guard(|| {
        let s = deref(solution, "solution")?;
        check_out(out, "out")?;
        let policy = VaoiPolicy {
            policy: s.policy.clone(),
        };
        write(out, Box::into_raw(Box::new(policy)), "out")
    })
}

/// Transmit whenever the battery is non-empty.
///
/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vaoi_policy_greedy(params: *const VaoiParams, out: *mut *mut VaoiPolicy) -> VaoiStatus {
    guard(|| {
        let p = deref(params, "params")?;
        check_out(out, "out")?;
        let policy = VaoiPolicy {
            policy: greedy_policy(p.params.shape()),
        };
        write(out, Box::into_raw(Box::new(policy)), "out")
    })
}

/// Builds a policy from `len` action bits (0 idle, 1 transmit) in
/// delta-major order.
///
/// # Safety
/// `params` must be a live handle, `actions` valid for `len` bytes, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vaoi_policy_from_actions(
    params: *const VaoiParams,
    actions: *const u8,
    len: usize,
    out: *mut *mut VaoiPolicy,
) -> VaoiStatus {
    guard(|| {
        let p = deref(params, "params")?;
        check_out(out, "out")?;
        if actions.is_null() {
            return Err(null("actions"));
        }
        let raw = std::slice::from_raw_parts(actions, len);
        let mut decoded = Vec::with_capacity(len);
        for (i, &a) in raw.iter().enumerate() {
            decoded.push(match a {
                0 => Action::Idle,
                1 => Action::Transmit,
                other => {
                    return Err(Fail(
                        VaoiStatus::InvalidParameter,
                        format!("action {other} at index {i} is not 0 or 1"),
                    ))
                }
            });
        }
        let policy = Policy::new(p.params.shape(), decoded)?;
        write(out, Box::into_raw(Box::new(VaoiPolicy { policy })), "out")
    })
}

/// # Safety
/// `policy` must be null or a live policy handle.
#[no_mangle]
pub unsafe extern "C" fn vaoi_policy_free(policy: *mut VaoiPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// # Safety
/// `policy` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vaoi_policy_action(
    policy: *const VaoiPolicy,
    delta: u32,
    battery: u32,
    out: *mut VaoiAction,
) -> VaoiStatus {
    guard(|| {
        let p = deref(policy, "policy")?;
        let state = State::new(delta, battery);
        p.policy.shape().checked_index(state)?;
        let action = match p.policy.action(state) {
            Action::Idle => VaoiAction::Idle,
            Action::Transmit => VaoiAction::Transmit,
        };
        write(out, action, "out")
    })
}

/// Exact long-run average VAoI of `policy` from state (0, 0).
///
/// # Safety
/// `params` and `policy` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vaoi_evaluate_exact(
    params: *const VaoiParams,
    policy: *const VaoiPolicy,
    out: *mut f64,
) -> VaoiStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let pol = deref(policy, "policy")?;
        check_out(out, "out")?;
        let ev = evaluate_chain(&p.kernel, &pol.policy, State::new(0, 0))?;
        write(out, ev.average_vaoi, "out")
    })
}

/// Monte Carlo estimate of the average VAoI with the library's default
/// burn-in. `ci99` receives the two interval endpoints when non-null.
///
/// # Safety
/// `params` and `policy` must be live handles, `mean` and `std_error`
/// writable, and `ci99` null or valid for two doubles.
#[no_mangle]
pub unsafe extern "C" fn vaoi_evaluate_monte_carlo(
    params: *const VaoiParams,
    policy: *const VaoiPolicy,
    runs: usize,
    horizon: u64,
    seed: u64,
    mean: *mut f64,
    std_error: *mut f64,
    ci99: *mut f64,
) -> VaoiStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let pol = deref(policy, "policy")?;
        check_out(mean, "mean")?;
        check_out(std_error, "std_error")?;
        let settings = McSettings {
            runs,
            horizon,
            seed,
            ..McSettings::default()
        };
        let r = monte_carlo_eval(&p.params, &pol.policy, &settings)?;
        mean.write(r.mean_vaoi);
        std_error.write(r.std_error);
        if !ci99.is_null() {
            ci99.write(r.confidence_interval_99.0);
            ci99.add(1).write(r.confidence_interval_99.1);
        }
        Ok(())
    })
}

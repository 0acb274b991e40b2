//! C ABI for the imexopt optimizer library.
//!
//! The surface follows the usual opaque-handle pattern: constructors return
//! heap pointers (null on failure), every fallible call returns an
//! [`ImexoptStatus`], and `imexopt_last_error` exposes the most recent error
//! text for the calling thread. Strings returned by the library are owned by
//! the caller and must be released with `imexopt_string_free`.
//!
//! The optimizer runs against a caller-supplied gradient callback, so hosts
//! in any language bring their own loss function and step any of the
//! library's methods over it.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use imexopt::error::Error;
use imexopt::gark::{
    builtin_tableau, check_order_conditions, format_tableau, parse_tableau_file,
    validate_tableau, GarkTableau,
};
use imexopt::optim::{init_state, method_step, Method};
use imexopt::params::{
    betas_from_rates, first_order_beta_map, rates_from_betas, HyperParams, OdeRates,
};
use imexopt::stability::{
    fe_eigenvalues, fe_stability_matrix, imex_euler_eigenvalues, imex_euler_stability_matrix,
    spectral_radius, StabilityParams,
};
use imexopt::state::{LossOracle, OptimizerState, ParamVector};

/// Status codes returned by fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImexoptStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidArgument = -2,
    Divergence = -3,
    CallbackFailed = -4,
    ParseError = -5,
    InvalidTableau = -6,
    Panic = -7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_for(e: &Error) -> ImexoptStatus {
    match e {
        Error::Divergence { .. } => ImexoptStatus::Divergence,
        Error::Parse { .. } => ImexoptStatus::ParseError,
        Error::InvalidTableau(_) => ImexoptStatus::InvalidTableau,
        _ => ImexoptStatus::InvalidArgument,
    }
}

fn fail(e: &Error) -> ImexoptStatus {
    set_error(&e.to_string());
    status_for(e)
}

/// Most recent error message on this thread; valid until the next failing
/// call. Never null.
#[no_mangle]
pub extern "C" fn imexopt_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must be a pointer previously returned by this library (or null).
#[no_mangle]
pub unsafe extern "C" fn imexopt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        set_error("null string argument");
        return None;
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Some(s),
        Err(_) => {
            set_error("string argument is not valid UTF-8");
            None
        }
    }
}

// --- parameter maps ----------------------------------------------------------

/// Continuous-time rate coefficients of the optimizer ODE.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ImexoptRates {
    pub d: f64,
    pub r: f64,
    pub p: f64,
    pub q: f64,
    pub epsilon: f64,
}

impl From<OdeRates> for ImexoptRates {
    fn from(r: OdeRates) -> Self {
        ImexoptRates { d: r.d, r: r.r, p: r.p, q: r.q, epsilon: r.epsilon }
    }
}

impl TryFrom<ImexoptRates> for OdeRates {
    type Error = Error;
    fn try_from(r: ImexoptRates) -> Result<OdeRates, Error> {
        OdeRates::new(r.d, r.r, r.p, r.q, r.epsilon)
    }
}

/// Exponential map: d = r = -ln(beta1)/h, p = q = -ln(beta2)/h.
#[no_mangle]
pub extern "C" fn imexopt_rates_from_betas(
    h: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    out: *mut ImexoptRates,
) -> ImexoptStatus {
    if out.is_null() {
        set_error("null output pointer");
        return ImexoptStatus::NullPointer;
    }
    let rates = HyperParams::new(h, beta1, beta2, epsilon).and_then(|hp| rates_from_betas(&hp));
    match rates {
        Ok(r) => {
            unsafe { *out = r.into() };
            ImexoptStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Inverse exponential map: beta_i = exp(-h rate).
#[no_mangle]
pub extern "C" fn imexopt_betas_from_rates(
    h: f64,
    rates: ImexoptRates,
    out_beta1: *mut f64,
    out_beta2: *mut f64,
) -> ImexoptStatus {
    if out_beta1.is_null() || out_beta2.is_null() {
        set_error("null output pointer");
        return ImexoptStatus::NullPointer;
    }
    match OdeRates::try_from(rates).and_then(|r| betas_from_rates(h, &r)) {
        Ok((b1, b2)) => {
            unsafe {
                *out_beta1 = b1;
                *out_beta2 = b2;
            }
            ImexoptStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// First-order map beta_i = 1 - h rate (the identification under which IMEX
/// Euler reproduces discrete Adam exactly).
#[no_mangle]
pub extern "C" fn imexopt_first_order_betas(
    h: f64,
    rates: ImexoptRates,
    out_beta1: *mut f64,
    out_beta2: *mut f64,
) -> ImexoptStatus {
    if out_beta1.is_null() || out_beta2.is_null() {
        set_error("null output pointer");
        return ImexoptStatus::NullPointer;
    }
    match OdeRates::try_from(rates).and_then(|r| first_order_beta_map(h, &r)) {
        Ok((b1, b2)) => {
            unsafe {
                *out_beta1 = b1;
                *out_beta2 = b2;
            }
            ImexoptStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

// --- tableaus ------------------------------------------------------------------

/// Opaque GARK tableau handle.
pub struct ImexoptTableau(GarkTableau);

/// Builds a builtin tableau by name (`imex-euler`, `imex-trapezoidal`,
/// `ssprk3-lobattoiiic(l22,l32)`, `rk4-lobattoiiic(alpha)`). Null on error.
///
/// # Safety
/// `name` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn imexopt_tableau_builtin(name: *const c_char) -> *mut ImexoptTableau {
    let Some(name) = cstr_arg(name) else { return std::ptr::null_mut() };
    match builtin_tableau(name) {
        Ok(t) => Box::into_raw(Box::new(ImexoptTableau(t))),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Parses the plain-text tableau format; the tableau is validated before
/// return. Null on error (see `imexopt_last_error`).
///
/// # Safety
/// `text` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn imexopt_tableau_parse(text: *const c_char) -> *mut ImexoptTableau {
    let Some(text) = cstr_arg(text) else { return std::ptr::null_mut() };
    match parse_tableau_file(text) {
        Ok(t) => Box::into_raw(Box::new(ImexoptTableau(t))),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Renders a tableau in the file format. Caller frees with
/// `imexopt_string_free`.
///
/// # Safety
/// `tableau` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn imexopt_tableau_format(tableau: *const ImexoptTableau) -> *mut c_char {
    if tableau.is_null() {
        set_error("null tableau handle");
        return std::ptr::null_mut();
    }
    let text = format_tableau(&(*tableau).0);
    CString::new(text).map(CString::into_raw).unwrap_or(std::ptr::null_mut())
}

/// Number of structural violations (0 means valid, negative means a null
/// handle). The first violation text lands in `imexopt_last_error`.
///
/// # Safety
/// `tableau` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn imexopt_tableau_violations(tableau: *const ImexoptTableau) -> i32 {
    if tableau.is_null() {
        set_error("null tableau handle");
        return -1;
    }
    let violations = validate_tableau(&(*tableau).0);
    if let Some(first) = violations.first() {
        set_error(first);
    }
    violations.len() as i32
}

/// Order-condition check: writes 0/1 flags for orders 1 and 2.
///
/// # Safety
/// `tableau` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn imexopt_tableau_order(
    tableau: *const ImexoptTableau,
    out_order1: *mut i32,
    out_order2: *mut i32,
) -> ImexoptStatus {
    if tableau.is_null() || out_order1.is_null() || out_order2.is_null() {
        set_error("null pointer");
        return ImexoptStatus::NullPointer;
    }
    match check_order_conditions(&(*tableau).0) {
        Ok(report) => {
            *out_order1 = report.order1_satisfied as i32;
            *out_order2 = report.order2_satisfied as i32;
            ImexoptStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Stage counts of the two partitions.
///
/// # Safety
/// `tableau` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn imexopt_tableau_stages(
    tableau: *const ImexoptTableau,
    out_explicit: *mut usize,
    out_implicit: *mut usize,
) -> ImexoptStatus {
    if tableau.is_null() || out_explicit.is_null() || out_implicit.is_null() {
        set_error("null pointer");
        return ImexoptStatus::NullPointer;
    }
    *out_explicit = (*tableau).0.s_explicit();
    *out_implicit = (*tableau).0.s_implicit();
    ImexoptStatus::Ok
}

/// Releases a tableau handle.
///
/// # Safety
/// `tableau` must be a handle from this library (or null); not used after.
#[no_mangle]
pub unsafe extern "C" fn imexopt_tableau_free(tableau: *mut ImexoptTableau) {
    if !tableau.is_null() {
        drop(Box::from_raw(tableau));
    }
}

// --- stability -----------------------------------------------------------------

/// Linearization scheme selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImexoptScheme {
    Fe = 0,
    ImexEuler = 1,
}

/// Parameters of the linearized one-step map.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ImexoptStabilityParams {
    pub h: f64,
    pub d: f64,
    pub r: f64,
    pub p: f64,
    pub q: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

fn stability_params(p: ImexoptStabilityParams) -> Result<StabilityParams, Error> {
    StabilityParams::new(p.h, p.d, p.r, p.p, p.q, p.lambda, p.epsilon)
}

/// Spectral radius of the scheme's linearized update; negative on error.
#[no_mangle]
pub extern "C" fn imexopt_spectral_radius(
    scheme: ImexoptScheme,
    params: ImexoptStabilityParams,
) -> f64 {
    match stability_params(params) {
        Ok(sp) => {
            let m = match scheme {
                ImexoptScheme::Fe => fe_stability_matrix(&sp),
                ImexoptScheme::ImexEuler => imex_euler_stability_matrix(&sp),
            };
            spectral_radius(&m)
        }
        Err(e) => {
            set_error(&e.to_string());
            -1.0
        }
    }
}

/// Closed-form eigenvalues of the scheme's stability matrix, sorted by real
/// part descending. `out_re` and `out_im` receive three values each.
///
/// # Safety
/// `out_re` and `out_im` must point to at least three writable f64 each.
#[no_mangle]
pub unsafe extern "C" fn imexopt_eigenvalues(
    scheme: ImexoptScheme,
    params: ImexoptStabilityParams,
    out_re: *mut f64,
    out_im: *mut f64,
) -> ImexoptStatus {
    if out_re.is_null() || out_im.is_null() {
        set_error("null output pointer");
        return ImexoptStatus::NullPointer;
    }
    match stability_params(params) {
        Ok(sp) => {
            let eigs = match scheme {
                ImexoptScheme::Fe => fe_eigenvalues(&sp),
                ImexoptScheme::ImexEuler => imex_euler_eigenvalues(&sp),
            };
            for (i, e) in eigs.iter().enumerate() {
                *out_re.add(i) = e.re;
                *out_im.add(i) = e.im;
            }
            ImexoptStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

// --- optimizer runs --------------------------------------------------------------

/// Gradient callback: fill `grad_out` (length `n`) and `*loss_out` for the
/// given parameters; return 0 on success, nonzero to abort the step.
pub type ImexoptGradFn = unsafe extern "C" fn(
    user: *mut c_void,
    t: f64,
    theta: *const f64,
    n: usize,
    grad_out: *mut f64,
    loss_out: *mut f64,
) -> i32;

struct CallbackOracle {
    callback: ImexoptGradFn,
    user: *mut c_void,
    dim: usize,
    evals: u64,
}

impl LossOracle for CallbackOracle {
    fn loss_and_grad(
        &mut self,
        t: f64,
        theta: &ParamVector,
    ) -> Result<(f64, ParamVector), Error> {
        self.evals += 1;
        let mut grad = vec![0.0; self.dim];
        let mut loss = 0.0;
        let rc = unsafe {
            (self.callback)(self.user, t, theta.as_ptr(), self.dim, grad.as_mut_ptr(), &mut loss)
        };
        if rc != 0 {
            return Err(Error::Config(format!("gradient callback returned {rc}")));
        }
        Ok((loss, ParamVector::from_vec(grad)))
    }

    fn grad_evals(&self) -> u64 {
        self.evals
    }
}

/// Opaque optimizer-run handle: a method plus the evolving discrete state.
pub struct ImexoptRun {
    method: Method,
    hp: HyperParams,
    oracle: CallbackOracle,
    state: OptimizerState,
}

unsafe fn make_run(
    method: Method,
    theta0: *const f64,
    n: usize,
    h: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    callback: Option<ImexoptGradFn>,
    user: *mut c_void,
) -> *mut ImexoptRun {
    if theta0.is_null() || n == 0 {
        set_error("theta0 must be a non-empty array");
        return std::ptr::null_mut();
    }
    let Some(callback) = callback else {
        set_error("null gradient callback");
        return std::ptr::null_mut();
    };
    let hp = match HyperParams::new(h, beta1, beta2, epsilon) {
        Ok(hp) => hp,
        Err(e) => {
            set_error(&e.to_string());
            return std::ptr::null_mut();
        }
    };
    let theta = ParamVector::from_vec(std::slice::from_raw_parts(theta0, n).to_vec());
    let mut oracle = CallbackOracle { callback, user, dim: n, evals: 0 };
    // Momentum starts at zero, velocity at the squared initial gradient
    // (one callback invocation).
    match init_state(theta, &mut oracle, 0.0) {
        Ok(state) => Box::into_raw(Box::new(ImexoptRun { method, hp, oracle, state })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Creates an optimizer run for a named method (`sgd`, `fe`, `adam`,
/// `imex-euler`, `imex-trapezoidal`, `heun`, `ssprk3`, `rk4`). Null on error.
///
/// # Safety
/// `method` must be a valid string, `theta0` an array of length `n`, and
/// `grad_fn` a callback that stays valid for the life of the run.
#[no_mangle]
pub unsafe extern "C" fn imexopt_run_new(
    method: *const c_char,
    theta0: *const f64,
    n: usize,
    h: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    grad_fn: Option<ImexoptGradFn>,
    user: *mut c_void,
) -> *mut ImexoptRun {
    let Some(name) = cstr_arg(method) else { return std::ptr::null_mut() };
    let method = match name.to_ascii_lowercase().as_str() {
        "sgd" => Method::Sgd,
        "fe" => Method::Fe,
        "adam" => Method::Adam,
        "imex-euler" => Method::ImexEuler,
        "imex-trapezoidal" => Method::ImexTrapezoidal,
        "heun" => Method::Heun,
        "ssprk3" => Method::Ssprk3,
        "rk4" => Method::Rk4,
        other => {
            set_error(&format!("unknown method '{other}'"));
            return std::ptr::null_mut();
        }
    };
    make_run(method, theta0, n, h, beta1, beta2, epsilon, grad_fn, user)
}

/// Creates an optimizer run driven by a custom GARK tableau (copied out of
/// the handle). Null on error.
///
/// # Safety
/// Same contract as `imexopt_run_new`, plus `tableau` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn imexopt_run_new_gark(
    tableau: *const ImexoptTableau,
    theta0: *const f64,
    n: usize,
    h: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    grad_fn: Option<ImexoptGradFn>,
    user: *mut c_void,
) -> *mut ImexoptRun {
    if tableau.is_null() {
        set_error("null tableau handle");
        return std::ptr::null_mut();
    }
    make_run(
        Method::Gark((*tableau).0.clone()),
        theta0,
        n,
        h,
        beta1,
        beta2,
        epsilon,
        grad_fn,
        user,
    )
}

/// Advances the run by one optimizer step.
///
/// # Safety
/// `run` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn imexopt_run_step(run: *mut ImexoptRun) -> ImexoptStatus {
    if run.is_null() {
        set_error("null run handle");
        return ImexoptStatus::NullPointer;
    }
    let run = &mut *run;
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        method_step(&run.method, &run.state, &mut run.oracle, &run.hp)
    }));
    match outcome {
        Ok(Ok(next)) => {
            run.state = next;
            ImexoptStatus::Ok
        }
        Ok(Err(e @ Error::Config(_))) => {
            set_error(&e.to_string());
            ImexoptStatus::CallbackFailed
        }
        Ok(Err(e)) => fail(&e),
        Err(_) => {
            set_error("panic inside imexopt_run_step");
            ImexoptStatus::Panic
        }
    }
}

/// Copies the current parameters into `out` (length `n` from construction).
///
/// # Safety
/// `run` must be live; `out` must hold at least `n` writable f64.
#[no_mangle]
pub unsafe extern "C" fn imexopt_run_theta(
    run: *const ImexoptRun,
    out: *mut f64,
) -> ImexoptStatus {
    if run.is_null() || out.is_null() {
        set_error("null pointer");
        return ImexoptStatus::NullPointer;
    }
    let state = &(*run).state;
    std::ptr::copy_nonoverlapping(state.theta.as_ptr(), out, state.theta.len());
    ImexoptStatus::Ok
}

/// Step count, continuous time, and cumulative gradient evaluations.
///
/// # Safety
/// `run` must be live; out pointers (where non-null) must be writable.
#[no_mangle]
pub unsafe extern "C" fn imexopt_run_stats(
    run: *const ImexoptRun,
    out_step: *mut u64,
    out_t: *mut f64,
    out_grad_evals: *mut u64,
) -> ImexoptStatus {
    if run.is_null() {
        set_error("null run handle");
        return ImexoptStatus::NullPointer;
    }
    let state = &(*run).state;
    if !out_step.is_null() {
        *out_step = state.step;
    }
    if !out_t.is_null() {
        *out_t = state.t;
    }
    if !out_grad_evals.is_null() {
        *out_grad_evals = state.grad_evals;
    }
    ImexoptStatus::Ok
}

/// Releases a run handle.
///
/// # Safety
/// `run` must be a handle from this library (or null); not used after.
#[no_mangle]
pub unsafe extern "C" fn imexopt_run_free(run: *mut ImexoptRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

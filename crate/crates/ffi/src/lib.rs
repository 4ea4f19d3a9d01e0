//! C interface to the `papc` library.
//!
//! Every function returns a [`PapcStatus`]. On failure the message is kept
//! per thread and can be read with [`papc_last_error`]. Objects are opaque
//! handles created by `*_new`/`*_build` and released by the matching
//! `*_free`. Matrices are dense and row-major.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use papc::diagnostics::kkt_residual;
use papc::linop::{
    power_iteration, validate_tau, LinearMap, Matrix, OrthoProjector, SpdOperator, TauStatus, Vector,
};
use papc::monotone::ProxFunction;
use papc::solver::{step, PapcState, Schedules, Variant};
use papc::stochastic::{NoiseModel, StochasticOracle, VarianceSchedule};
use papc::zoo::{self, ZooInstance, ZooParams};
use papc::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PapcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotPositiveDefinite = 4,
    UnknownName = 5,
    StepSizeRejected = 6,
    Diverged = 7,
    NumericalFailure = 8,
    Panic = 9,
}

/// Outcome of a step-size check.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PapcTauVerdict {
    Accepted = 0,
    Rejected = 1,
    Indeterminate = 2,
}

/// A proximable function.
pub struct PapcProx {
    inner: ProxFunction,
}

/// A zoo problem with its reference solution.
pub struct PapcProblem {
    inner: ZooInstance,
}

/// Iterator state of a run on a zoo problem.
pub struct PapcSolver {
    instance: ZooInstance,
    schedules: Schedules,
    oracle: StochasticOracle,
    state: PapcState,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PapcStatus {
    match e {
        Error::DimensionMismatch { .. } => PapcStatus::DimensionMismatch,
        Error::NotSpd(_) => PapcStatus::NotPositiveDefinite,
        Error::Unknown { .. } => PapcStatus::UnknownName,
        Error::StepSizeViolation(_) | Error::RegimeViolation(_) => PapcStatus::StepSizeRejected,
        Error::Divergence { .. } => PapcStatus::Diverged,
        Error::Oracle(_) | Error::Indeterminate(_) | Error::Diagnostics(_) => PapcStatus::NumericalFailure,
        _ => PapcStatus::InvalidArgument,
    }
}

enum Failure {
    Status(PapcStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn fail(status: PapcStatus, msg: impl Into<String>) -> Failure {
    Failure::Status(status, msg.into())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PapcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PapcStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            PapcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(PapcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PapcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(PapcStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(PapcStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(PapcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(PapcStatus::NullPointer, format!("{what} is null")))
}

fn row_major(data: &[f64], rows: usize, cols: usize, what: &str) -> Result<Matrix, Failure> {
    if rows == 0 || cols == 0 {
        return Err(fail(PapcStatus::InvalidArgument, format!("{what} has a zero dimension")));
    }
    if data.len() != rows * cols {
        return Err(fail(PapcStatus::DimensionMismatch, format!("{what}: wrong length")));
    }
    Ok(Matrix::from_row_slice(rows, cols, data))
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<(), Failure> {
    if expected != found {
        return Err(fail(
            PapcStatus::DimensionMismatch,
            format!("{what}: expected length {expected}, got {found}"),
        ));
    }
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn papc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a function from a tag such as `l1(weight=0.5)` or `box(lo=-1,hi=1)`.
///
/// # Safety
/// `tag` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn papc_prox_new(tag: *const c_char, dim: usize, out: *mut *mut PapcProx) -> PapcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let tag = str_arg(tag, "tag")?;
        let inner = ProxFunction::from_tag(tag, dim, Path::new("."))?;
        *out = Box::into_raw(Box::new(PapcProx { inner }));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`papc_prox_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn papc_prox_free(p: *mut PapcProx) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// `out = prox_{λ f}(x)`.
///
/// # Safety
/// `x` and `out` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn papc_prox_apply(
    p: *const PapcProx,
    lambda: f64,
    x: *const f64,
    out: *mut f64,
    len: usize,
) -> PapcStatus {
    guard(|| {
        let f = &handle(p, "prox")?.inner;
        check_len("x", f.dim(), len)?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(fail(PapcStatus::InvalidArgument, format!("lambda must be positive, got {lambda}")));
        }
        let x = Vector::from_column_slice(slice_arg(x, len, "x")?);
        let y = f.prox(lambda, &x);
        out_slice(out, len, "out")?.copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// `f(x)`; `+inf` outside the domain.
///
/// # Safety
/// `x` must point to `len` doubles and `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn papc_prox_value(p: *const PapcProx, x: *const f64, len: usize, value: *mut f64) -> PapcStatus {
    guard(|| {
        let f = &handle(p, "prox")?.inner;
        check_len("x", f.dim(), len)?;
        let x = Vector::from_column_slice(slice_arg(x, len, "x")?);
        let v = f
            .value(&x)
            .ok_or_else(|| fail(PapcStatus::InvalidArgument, "function has no closed-form value"))?;
        *out_ref(value, "value")? = match v {
            papc::monotone::ExtReal::Finite(v) => v,
            papc::monotone::ExtReal::PosInf => f64::INFINITY,
            papc::monotone::ExtReal::NegInf => f64::NEG_INFINITY,
        };
        Ok(())
    })
}

/// Spectral norm of a `rows × cols` matrix by power iteration on `A'A`.
/// `converged` is set to 1 when the residual test was met.
///
/// # Safety
/// `a` must point to `rows * cols` doubles; `norm` and `converged` must be writable.
#[no_mangle]
pub unsafe extern "C" fn papc_spectral_norm(
    a: *const f64,
    rows: usize,
    cols: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
    norm: *mut f64,
    converged: *mut c_int,
) -> PapcStatus {
    guard(|| {
        let m = row_major(slice_arg(a, rows * cols, "a")?, rows, cols, "a")?;
        if tol.is_nan() || tol <= 0.0 || max_iter == 0 {
            return Err(fail(PapcStatus::InvalidArgument, "tol and max_iter must be positive"));
        }
        let gram = LinearMap::dense(m.transpose() * &m);
        let r = power_iteration(&gram, tol, max_iter, ChaCha8Rng::seed_from_u64(seed));
        *out_ref(norm, "norm")? = r.estimate().value.max(0.0).sqrt();
        *out_ref(converged, "converged")? = c_int::from(r.is_converged());
        Ok(())
    })
}

/// Checks `τ ‖U^{1/2} L‖² < 1 - margin` for dense `U` (`k × k`, symmetric
/// positive definite) and `L` (`k × n`), with `V` the whole space.
///
/// # Safety
/// `u` and `l` must point to `k * k` and `k * n` doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn papc_validate_tau(
    u: *const f64,
    l: *const f64,
    k: usize,
    n: usize,
    tau: f64,
    margin: f64,
    verdict: *mut PapcTauVerdict,
    lambda_max: *mut f64,
) -> PapcStatus {
    guard(|| {
        let u = SpdOperator::dense(row_major(slice_arg(u, k * k, "u")?, k, k, "u")?)?;
        let l = LinearMap::dense(row_major(slice_arg(l, k * n, "l")?, k, n, "l")?);
        let cert = validate_tau(&u, &l, &OrthoProjector::full(n), tau, margin)?;
        *out_ref(verdict, "verdict")? = match cert.status {
            TauStatus::Accepted => PapcTauVerdict::Accepted,
            TauStatus::Rejected => PapcTauVerdict::Rejected,
            TauStatus::Indeterminate => PapcTauVerdict::Indeterminate,
        };
        *out_ref(lambda_max, "lambda_max")? = cert.lambda_max;
        Ok(())
    })
}

/// Builds a zoo problem (`cls`, `lasso`, `fused`, `multi`); `dim = 0` picks
/// the default dimension.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn papc_problem_build(
    name: *const c_char,
    dim: usize,
    seed: u64,
    out: *mut *mut PapcProblem,
) -> PapcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let name = str_arg(name, "name")?;
        let params = ZooParams {
            dim: (dim > 0).then_some(dim),
            seed,
        };
        let inner = zoo::build(name, &params)?;
        *out = Box::into_raw(Box::new(PapcProblem { inner }));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`papc_problem_build`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn papc_problem_free(p: *mut PapcProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Primal and dual dimensions of the iterates.
///
/// # Safety
/// `p` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn papc_problem_dims(p: *const PapcProblem, primal: *mut usize, dual: *mut usize) -> PapcStatus {
    guard(|| {
        let inst = &handle(p, "problem")?.inner;
        *out_ref(primal, "primal")? = inst.spec.primal_dim();
        *out_ref(dual, "dual")? = inst.spec.dual_dim();
        Ok(())
    })
}

/// Copies the reference solution.
///
/// # Safety
/// `x` and `v` must hold `primal_len` and `dual_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn papc_problem_solution(
    p: *const PapcProblem,
    x: *mut f64,
    primal_len: usize,
    v: *mut f64,
    dual_len: usize,
) -> PapcStatus {
    guard(|| {
        let inst = &handle(p, "problem")?.inner;
        check_len("x", inst.spec.primal_dim(), primal_len)?;
        check_len("v", inst.spec.dual_dim(), dual_len)?;
        out_slice(x, primal_len, "x")?.copy_from_slice(inst.x_bar.as_slice());
        out_slice(v, dual_len, "v")?.copy_from_slice(inst.v_bar.as_slice());
        Ok(())
    })
}

/// Starts a run from zero with the problem's default step sizes and gaussian
/// noise of variance `sigma0_sq / (n+1)^(1+epsilon)` (`sigma0_sq = 0` for
/// exact gradients).
///
/// # Safety
/// `p` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn papc_solver_new(
    p: *const PapcProblem,
    sigma0_sq: f64,
    epsilon: f64,
    seed: u64,
    out: *mut *mut PapcSolver,
) -> PapcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let instance = handle(p, "problem")?.inner.clone();
        let noise = if sigma0_sq == 0.0 {
            NoiseModel::none()
        } else {
            NoiseModel::Gaussian(VarianceSchedule::Polynomial { sigma0_sq, epsilon })
        };
        let oracle = instance.oracle(noise, seed)?;
        let schedules = instance.default_schedules()?;
        let state = PapcState::new(&instance.spec, &instance.x0(), &instance.v0())?;
        *out = Box::into_raw(Box::new(PapcSolver {
            instance,
            schedules,
            oracle,
            state,
        }));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle from [`papc_solver_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn papc_solver_free(s: *mut PapcSolver) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Advances `count` iterations. On divergence the state stays at the last
/// finite iterate.
///
/// # Safety
/// `s` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn papc_solver_step(s: *mut PapcSolver, count: usize) -> PapcStatus {
    guard(|| {
        let s = out_ref(s, "solver")?;
        for _ in 0..count {
            s.state = step(Variant::Papc, &s.state, &s.instance.spec, &s.schedules, &s.oracle)?;
        }
        Ok(())
    })
}

/// Current iteration count and iterates.
///
/// # Safety
/// `x` and `v` must hold `primal_len` and `dual_len` doubles; `n` must be writable.
#[no_mangle]
pub unsafe extern "C" fn papc_solver_state(
    s: *const PapcSolver,
    n: *mut usize,
    x: *mut f64,
    primal_len: usize,
    v: *mut f64,
    dual_len: usize,
) -> PapcStatus {
    guard(|| {
        let s = handle(s, "solver")?;
        check_len("x", s.state.x.len(), primal_len)?;
        check_len("v", s.state.v.len(), dual_len)?;
        *out_ref(n, "n")? = s.state.n;
        out_slice(x, primal_len, "x")?.copy_from_slice(s.state.x.as_slice());
        out_slice(v, dual_len, "v")?.copy_from_slice(s.state.v.as_slice());
        Ok(())
    })
}

/// Primal and dual KKT residuals of the current iterate.
///
/// # Safety
/// `s` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn papc_solver_kkt(s: *const PapcSolver, primal: *mut f64, dual: *mut f64) -> PapcStatus {
    guard(|| {
        let s = handle(s, "solver")?;
        let r = kkt_residual(&s.state.x, &s.state.v, &s.instance.spec)?;
        *out_ref(primal, "primal")? = r.primal;
        *out_ref(dual, "dual")? = r.dual;
        Ok(())
    })
}

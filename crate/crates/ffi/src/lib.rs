//! C ABI over `roa-core`.
//!
//! Objects are opaque heap handles released with their `*_free` function.
//! Every fallible call returns a [`RoaStatus`]; on failure the message is
//! available from [`roa_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use roa_core::converse::{self, CertOptions, ConverseCertificate, Membership};
use roa_core::dynamics::{make_saturated_lqr, make_suboptimal_mpc, SystemDef};
use roa_core::sampling::{self, DomainBox};
use roa_core::scenario::{self, EstimateParams, GramEstimate, ShapeMode};
use roa_core::RoaError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoaStatus {
    Ok = 0,
    InvalidArgument = 1,
    DimensionMismatch = 2,
    Diverged = 3,
    Certificate = 4,
    HypothesisViolated = 5,
    DomainMismatch = 6,
    SolverStall = 7,
    Solver = 8,
    EmptyPool = 9,
    Json = 10,
    Io = 11,
    NullPointer = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoaShapeMode {
    DdLp = 0,
    FullPsd = 1,
}

/// Scalar fields of a certificate.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct RoaCertSummary {
    pub p_tilde: usize,
    pub r_iota: f64,
    pub iota: f64,
    pub p: usize,
    pub c_p: f64,
}

pub struct RoaSystem {
    inner: SystemDef,
}

pub struct RoaCertificate {
    inner: ConverseCertificate,
}

pub struct RoaEstimate {
    inner: GramEstimate,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &RoaError) -> RoaStatus {
    match err {
        RoaError::InvalidArgument(_) => RoaStatus::InvalidArgument,
        RoaError::DimensionMismatch { .. } => RoaStatus::DimensionMismatch,
        RoaError::Diverged { .. } => RoaStatus::Diverged,
        RoaError::Certificate(_) => RoaStatus::Certificate,
        RoaError::HypothesisViolated(_) => RoaStatus::HypothesisViolated,
        RoaError::DomainMismatch(_) => RoaStatus::DomainMismatch,
        RoaError::SolverStall { .. } => RoaStatus::SolverStall,
        RoaError::Solver(_) => RoaStatus::Solver,
        RoaError::EmptyPool(_) => RoaStatus::EmptyPool,
        RoaError::Json(_) => RoaStatus::Json,
        RoaError::Io(_) => RoaStatus::Io,
    }
}

enum Failure {
    Roa(RoaError),
    Null(&'static str),
}

impl From<RoaError> for Failure {
    fn from(e: RoaError) -> Self {
        Failure::Roa(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> RoaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RoaStatus::Ok
        }
        Ok(Err(Failure::Roa(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            RoaStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            RoaStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    *out = value;
    Ok(())
}

unsafe fn read_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Roa(RoaError::InvalidArgument(format!("{what} is not UTF-8"))))
}

fn into_c_string(text: String) -> Result<*mut c_char, Failure> {
    CString::new(text)
        .map(CString::into_raw)
        .map_err(|_| Failure::Roa(RoaError::InvalidArgument("string contains NUL".into())))
}

/// Message of the last failed call on this thread, or NULL. Release with
/// `roa_string_free`.
#[no_mangle]
pub extern "C" fn roa_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_deref() {
        Some(msg) => CString::new(msg.replace('\0', " "))
            .map(CString::into_raw)
            .unwrap_or(ptr::null_mut()),
        None => ptr::null_mut(),
    })
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn roa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Saturated LQR benchmark.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roa_system_lqr(out: *mut *mut RoaSystem) -> RoaStatus {
    guard(|| store(out, RoaSystem { inner: make_saturated_lqr() }))
}

/// Suboptimal MPC benchmark; `alpha <= 0` selects the default step size.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roa_system_mpc(
    alpha: f64,
    r_iters: usize,
    out: *mut *mut RoaSystem,
) -> RoaStatus {
    guard(|| {
        let alpha = (alpha > 0.0).then_some(alpha);
        store(out, RoaSystem { inner: make_suboptimal_mpc(alpha, r_iters)? })
    })
}

/// System from its JSON definition.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roa_system_from_json(
    json: *const c_char,
    out: *mut *mut RoaSystem,
) -> RoaStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        store(out, RoaSystem { inner: SystemDef::from_json(text)? })
    })
}

/// State dimension, or 0 for NULL.
///
/// # Safety
/// `sys` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn roa_system_dim(sys: *const RoaSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.inner.n)
}

/// # Safety
/// `sys` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn roa_system_free(sys: *mut RoaSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Certificate at horizon `p`; `iota <= 0` selects the default.
///
/// # Safety
/// `sys` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roa_certificate_compute(
    sys: *const RoaSystem,
    p: usize,
    iota: f64,
    out: *mut *mut RoaCertificate,
) -> RoaStatus {
    guard(|| {
        let sys = deref(sys, "sys")?;
        let mut opts = CertOptions::default();
        if iota > 0.0 {
            opts.iota = iota;
        }
        let cert = ConverseCertificate::compute(&sys.inner, p, &opts)?;
        store(out, RoaCertificate { inner: cert })
    })
}

/// Certificate from a user-supplied invariance window and radius.
///
/// # Safety
/// `sys` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roa_certificate_from_radius(
    sys: *const RoaSystem,
    p_tilde: usize,
    r_iota: f64,
    iota: f64,
    p: usize,
    out: *mut *mut RoaCertificate,
) -> RoaStatus {
    guard(|| {
        let sys = deref(sys, "sys")?;
        let cert = ConverseCertificate::from_radius(&sys.inner, p_tilde, r_iota, iota, p)?;
        store(out, RoaCertificate { inner: cert })
    })
}

/// # Safety
/// `cert` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roa_certificate_summary(
    cert: *const RoaCertificate,
    out: *mut RoaCertSummary,
) -> RoaStatus {
    guard(|| {
        let c = &deref(cert, "cert")?.inner;
        let summary = RoaCertSummary {
            p_tilde: c.p_tilde,
            r_iota: c.r_iota,
            iota: c.iota,
            p: c.p,
            c_p: c.c_p,
        };
        write(out, summary, "out")
    })
}

/// Decide whether `x` lies in the certified sublevel set. `v_p` receives
/// the truncated energy for inside points and NaN otherwise; it may be NULL.
///
/// # Safety
/// Handles must be live, `x` must hold `len` values, `inside` must be valid.
#[no_mangle]
pub unsafe extern "C" fn roa_certificate_membership(
    sys: *const RoaSystem,
    cert: *const RoaCertificate,
    x: *const f64,
    len: usize,
    inside: *mut bool,
    v_p: *mut f64,
) -> RoaStatus {
    guard(|| {
        let sys = deref(sys, "sys")?;
        let cert = deref(cert, "cert")?;
        let x = slice(x, len, "x")?;
        let (is_in, value) = match converse::membership(&sys.inner, &cert.inner, x)? {
            Membership::Inside { v_p } => (true, v_p),
            Membership::Outside => (false, f64::NAN),
        };
        write(inside, is_in, "inside")?;
        if !v_p.is_null() {
            *v_p = value;
        }
        Ok(())
    })
}

/// Certificate as JSON; release with `roa_string_free`.
///
/// # Safety
/// `cert` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roa_certificate_to_json(
    cert: *const RoaCertificate,
    out: *mut *mut c_char,
) -> RoaStatus {
    guard(|| {
        let text = deref(cert, "cert")?.inner.to_json()?;
        write(out, into_c_string(text)?, "out")
    })
}

/// # Safety
/// `cert` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn roa_certificate_free(cert: *mut RoaCertificate) {
    if !cert.is_null() {
        drop(Box::from_raw(cert));
    }
}

/// Draw pools in the box `[lower, upper]` (length `dim`) and fit an
/// estimate of degree `2q`.
///
/// # Safety
/// Handles must be live, `lower`/`upper` must hold `dim` values, `out` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn roa_estimate_run(
    sys: *const RoaSystem,
    cert: *const RoaCertificate,
    lower: *const f64,
    upper: *const f64,
    dim: usize,
    n1: usize,
    n2: usize,
    q: usize,
    seed: u64,
    mode: RoaShapeMode,
    out: *mut *mut RoaEstimate,
) -> RoaStatus {
    guard(|| {
        let sys = deref(sys, "sys")?;
        let cert = deref(cert, "cert")?;
        let domain = DomainBox::new(
            slice(lower, dim, "lower")?.to_vec(),
            slice(upper, dim, "upper")?.to_vec(),
        )?;
        let mut params = EstimateParams::new(n1, n2, q, seed);
        params.mode = match mode {
            RoaShapeMode::DdLp => ShapeMode::DdLp,
            RoaShapeMode::FullPsd => ShapeMode::FullPsd,
        };
        let est = scenario::estimate(&sys.inner, &cert.inner, &domain, &params)?;
        store(out, RoaEstimate { inner: est })
    })
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roa_estimate_from_json(
    json: *const c_char,
    out: *mut *mut RoaEstimate,
) -> RoaStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        store(out, RoaEstimate { inner: GramEstimate::from_json(text)? })
    })
}

/// # Safety
/// `est` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roa_estimate_to_json(
    est: *const RoaEstimate,
    out: *mut *mut c_char,
) -> RoaStatus {
    guard(|| {
        let text = deref(est, "est")?.inner.to_json()?;
        write(out, into_c_string(text)?, "out")
    })
}

fn check_dim(est: &GramEstimate, len: usize) -> Result<(), Failure> {
    if est.poly.basis.n != len {
        return Err(Failure::Roa(RoaError::DimensionMismatch {
            expected: est.poly.basis.n,
            got: len,
        }));
    }
    Ok(())
}

/// Polynomial value at `x`.
///
/// # Safety
/// `est` must be live, `x` must hold `len` values, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn roa_estimate_eval(
    est: *const RoaEstimate,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> RoaStatus {
    guard(|| {
        let est = &deref(est, "est")?.inner;
        check_dim(est, len)?;
        write(out, est.poly.eval(slice(x, len, "x")?), "out")
    })
}

/// Whether `x` lies strictly below the estimate's level.
///
/// # Safety
/// `est` must be live, `x` must hold `len` values, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn roa_estimate_contains(
    est: *const RoaEstimate,
    x: *const f64,
    len: usize,
    out: *mut bool,
) -> RoaStatus {
    guard(|| {
        let est = &deref(est, "est")?.inner;
        check_dim(est, len)?;
        write(out, est.contains(slice(x, len, "x")?), "out")
    })
}

/// Fit residual `eta_N` and level `c_N`; either pointer may be NULL.
///
/// # Safety
/// `est` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn roa_estimate_levels(
    est: *const RoaEstimate,
    eta_n: *mut f64,
    c_n: *mut f64,
) -> RoaStatus {
    guard(|| {
        let est = &deref(est, "est")?.inner;
        if !eta_n.is_null() {
            *eta_n = est.eta_n;
        }
        if !c_n.is_null() {
            *c_n = est.c_n;
        }
        Ok(())
    })
}

/// # Safety
/// `est` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn roa_estimate_free(est: *mut RoaEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Accuracy reached by `n` samples at confidence `1 - delta` with
/// `n_theta` decision variables.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roa_complexity_epsilon(
    n: u64,
    delta: f64,
    n_theta: usize,
    out: *mut f64,
) -> RoaStatus {
    guard(|| write(out, sampling::achieved_epsilon(n, delta, n_theta)?, "out"))
}

/// Smallest sample count reaching accuracy `epsilon`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roa_complexity_required(
    epsilon: f64,
    delta: f64,
    n_theta: usize,
    out: *mut u64,
) -> RoaStatus {
    guard(|| {
        let quote = sampling::required_samples(epsilon, delta, n_theta)?;
        write(out, quote.n_required, "out")
    })
}

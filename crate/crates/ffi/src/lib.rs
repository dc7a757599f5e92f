//! C interface to `acd-core`.
//!
//! Series and fits are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`AcdStatus`]; on failure the
//! message is available from [`acd_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use acd_core::acd_model::{alpha_for_kappa, tail_index, AcdParams};
use acd_core::mle::{self, EstimationResult, FitOptions};
use acd_core::rng::{make_stream, InnovationSpec};
use acd_core::sim::{simulate_fixed_span, DurationSeries, DEFAULT_BURN_IN};
use acd_core::tail::hill_estimator;
use acd_core::AcdError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcdStatus {
    Ok = 0,
    /// Bad parameter values or data.
    InvalidArgument = 1,
    NullPointer = 2,
    /// The optimizer stopped before converging; the fit handle is still set.
    NotConverged = 3,
    /// A numerical failure not caused by the input.
    ComputationFailed = 4,
    /// Caller buffer too small.
    BufferTooSmall = 5,
    /// Internal panic caught at the boundary.
    Panic = 6,
}

/// Opaque duration series.
pub struct AcdSeries {
    inner: DurationSeries,
}

/// Opaque estimation result.
pub struct AcdFit {
    inner: EstimationResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &AcdError) -> AcdStatus {
    if err.is_input_error() {
        AcdStatus::InvalidArgument
    } else if matches!(err, AcdError::NotConverged { .. }) {
        AcdStatus::NotConverged
    } else {
        AcdStatus::ComputationFailed
    }
}

fn fail(err: AcdError) -> AcdStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn null(what: &str) -> AcdStatus {
    set_error(format!("{what} is null"));
    AcdStatus::NullPointer
}

/// Runs `f`, turning panics into [`AcdStatus::Panic`].
fn guard(f: impl FnOnce() -> AcdStatus) -> AcdStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            AcdStatus::Panic
        }
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn acd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Simulates exponential-innovation durations on `[0, span]`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn acd_simulate(
    omega: f64,
    alpha: f64,
    span: f64,
    seed: u64,
    out: *mut *mut AcdSeries,
) -> AcdStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let result = AcdParams::new(omega, alpha).and_then(|p| {
            let mut stream = make_stream(seed, 0);
            simulate_fixed_span(
                &p,
                &InnovationSpec::UnitExponential,
                span,
                &mut stream,
                DEFAULT_BURN_IN,
            )
        });
        match result {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(AcdSeries { inner }));
                AcdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Copies `n` durations into a new series. A positive `span` marks it as
/// observed on `[0, span]`; pass 0 for a fixed-count series.
///
/// # Safety
/// `durations` must point to `n` readable doubles and `out` to writable
/// storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn acd_series_from_durations(
    durations: *const f64,
    n: usize,
    span: f64,
    out: *mut *mut AcdSeries,
) -> AcdStatus {
    guard(|| {
        if durations.is_null() {
            return null("durations");
        }
        if out.is_null() {
            return null("out");
        }
        if n == 0 {
            return fail(AcdError::EmptyInput);
        }
        let xs = std::slice::from_raw_parts(durations, n).to_vec();
        let x0 = xs.iter().sum::<f64>() / n as f64;
        let span = if span > 0.0 { Some(span) } else { None };
        match DurationSeries::from_durations(xs, span, x0) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(AcdSeries { inner }));
                AcdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of durations, 0 for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn acd_series_len(series: *const AcdSeries) -> usize {
    series.as_ref().map_or(0, |s| s.inner.len())
}

/// Copies the durations into `buf`, which must hold `acd_series_len` values.
///
/// # Safety
/// `series` must be a live handle and `buf` must point to `capacity`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn acd_series_copy_durations(
    series: *const AcdSeries,
    buf: *mut f64,
    capacity: usize,
) -> AcdStatus {
    guard(|| {
        let Some(s) = series.as_ref() else {
            return null("series");
        };
        if buf.is_null() {
            return null("buf");
        }
        let d = &s.inner.durations;
        if capacity < d.len() {
            set_error(format!("buffer holds {capacity} values, need {}", d.len()));
            return AcdStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(d.as_ptr(), buf, d.len());
        AcdStatus::Ok
    })
}

/// # Safety
/// `series` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn acd_series_free(series: *mut AcdSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Quasi-maximum-likelihood fit. A non-zero `include_remainder` adds the
/// censored last-duration term, which needs a series with a span. On
/// [`AcdStatus::NotConverged`] the handle is still written so the caller can
/// inspect it.
///
/// # Safety
/// `series` must be a live handle and `out` writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn acd_fit(
    series: *const AcdSeries,
    include_remainder: i32,
    out: *mut *mut AcdFit,
) -> AcdStatus {
    guard(|| {
        let Some(s) = series.as_ref() else {
            return null("series");
        };
        if out.is_null() {
            return null("out");
        }
        let options = FitOptions {
            include_remainder: include_remainder != 0,
            ..FitOptions::default()
        };
        match mle::fit(&s.inner, &options) {
            Ok(inner) => {
                let converged = inner.converged;
                *out = Box::into_raw(Box::new(AcdFit { inner }));
                if converged {
                    AcdStatus::Ok
                } else {
                    set_error("optimizer did not converge");
                    AcdStatus::NotConverged
                }
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `fit` must be a live handle; `omega` and `alpha` writable.
#[no_mangle]
pub unsafe extern "C" fn acd_fit_theta(
    fit: *const AcdFit,
    omega: *mut f64,
    alpha: *mut f64,
) -> AcdStatus {
    guard(|| {
        let Some(f) = fit.as_ref() else {
            return null("fit");
        };
        if omega.is_null() || alpha.is_null() {
            return null("output pointer");
        }
        *omega = f.inner.theta_hat.omega;
        *alpha = f.inner.theta_hat.alpha;
        AcdStatus::Ok
    })
}

/// Standard errors from the inverse observed information.
///
/// # Safety
/// `fit` must be a live handle; `se_omega` and `se_alpha` writable.
#[no_mangle]
pub unsafe extern "C" fn acd_fit_std_errors(
    fit: *const AcdFit,
    se_omega: *mut f64,
    se_alpha: *mut f64,
) -> AcdStatus {
    guard(|| {
        let Some(f) = fit.as_ref() else {
            return null("fit");
        };
        if se_omega.is_null() || se_alpha.is_null() {
            return null("output pointer");
        }
        match f.inner.std_errors {
            Some([a, b]) => {
                *se_omega = a;
                *se_alpha = b;
                AcdStatus::Ok
            }
            None => fail(AcdError::SingularInformation),
        }
    })
}

/// `(alpha_hat - null_alpha) / se(alpha_hat)`.
///
/// # Safety
/// `fit` must be a live handle and `t` writable.
#[no_mangle]
pub unsafe extern "C" fn acd_fit_t_ratio(
    fit: *const AcdFit,
    null_alpha: f64,
    t: *mut f64,
) -> AcdStatus {
    guard(|| {
        let Some(f) = fit.as_ref() else {
            return null("fit");
        };
        if t.is_null() {
            return null("t");
        }
        match mle::t_ratio(&f.inner, null_alpha) {
            Ok(v) => {
                *t = v;
                AcdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// 1 if the fit converged, 0 otherwise (including a null handle).
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn acd_fit_converged(fit: *const AcdFit) -> i32 {
    fit.as_ref().map_or(0, |f| i32::from(f.inner.converged))
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn acd_fit_free(fit: *mut AcdFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Tail index of the stationary durations for exponential innovations.
///
/// # Safety
/// `kappa` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acd_tail_index(alpha: f64, kappa: *mut f64) -> AcdStatus {
    guard(|| {
        if kappa.is_null() {
            return null("kappa");
        }
        match tail_index(alpha, &InnovationSpec::UnitExponential) {
            Ok(k) => {
                *kappa = k;
                AcdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `alpha` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acd_alpha_for_kappa(kappa: f64, alpha: *mut f64) -> AcdStatus {
    guard(|| {
        if alpha.is_null() {
            return null("alpha");
        }
        match alpha_for_kappa(kappa) {
            Ok(a) => {
                *alpha = a;
                AcdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Hill estimate from the `k` largest of `n` positive values.
///
/// # Safety
/// `data` must point to `n` readable doubles and `kappa_hat` be writable.
#[no_mangle]
pub unsafe extern "C" fn acd_hill(
    data: *const f64,
    n: usize,
    k: usize,
    kappa_hat: *mut f64,
) -> AcdStatus {
    guard(|| {
        if data.is_null() {
            return null("data");
        }
        if kappa_hat.is_null() {
            return null("kappa_hat");
        }
        let xs = std::slice::from_raw_parts(data, n);
        match hill_estimator(xs, k) {
            Ok(e) => {
                *kappa_hat = e.kappa_hat;
                AcdStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

//! C ABI over the qcf estimator.
//!
//! Object lifetimes follow the usual opaque-handle pattern: constructors
//! return `QCF_OK` and write a handle through an out-pointer; every handle
//! must be released with its matching `*_free`. Fallible calls return a
//! `QcfStatus`; the most recent error message is kept per thread and can be
//! copied out with `qcf_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use qcf::inference::{theta_confidence_intervals, theta_covariance, wald_test, InferenceConfig};
use qcf::metrics::{metric_bundle, QuantileFit};
use qcf::panel::{Observation, Panel};
use qcf::pipeline::{fit_qcf, FitConfig, QcfFit};

/// Status codes mirrored into the generated header.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcfStatus {
    Ok = 0,
    InvalidArgument = 1,
    ParseError = 2,
    EstimationDegenerate = 3,
    SingularMatrix = 4,
    IoError = 5,
    NullPointer = 6,
    Panic = 7,
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

fn status_of(err: &qcf::Error) -> QcfStatus {
    match err {
        qcf::Error::InvalidInput(_) | qcf::Error::Dimension(_) | qcf::Error::BasisOverflow { .. } => {
            QcfStatus::InvalidArgument
        }
        qcf::Error::Degenerate(_) => QcfStatus::EstimationDegenerate,
        qcf::Error::Singular(_) => QcfStatus::SingularMatrix,
        qcf::Error::Parse { .. } | qcf::Error::Csv(_) | qcf::Error::Json(_) => QcfStatus::ParseError,
        qcf::Error::Io(_) => QcfStatus::IoError,
    }
}

fn catch<F: FnOnce() -> Result<QcfStatus, qcf::Error> + std::panic::UnwindSafe>(
    f: F,
) -> QcfStatus {
    match std::panic::catch_unwind(f) {
        Ok(Ok(status)) => status,
        Ok(Err(err)) => {
            set_error(&err.to_string());
            status_of(&err)
        }
        Err(_) => {
            set_error("internal panic");
            QcfStatus::Panic
        }
    }
}

/// Opaque panel handle.
pub struct QcfPanel {
    inner: Panel,
}

/// Opaque fitted-model handle.
pub struct QcfModel {
    inner: QcfFit,
    fitted_panel: Panel,
}

/// Metric bundle in plain C layout.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QcfMetrics {
    pub qhe: f64,
    pub aqe: f64,
    pub r1_total: f64,
    pub r1_time_series: f64,
    pub r1_cross_section: f64,
}

/// Copy the last error message into `buf` (NUL-terminated, truncated to
/// `len`); returns the full message length.
///
/// # Safety
/// `buf` must be writable for `len` bytes (or NULL to query the length).
#[no_mangle]
pub unsafe extern "C" fn qcf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            // Always terminate.
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// Load a long-format CSV panel (header `time,id,y,x1..xd`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qcf_panel_load_csv(
    path: *const c_char,
    standardize: bool,
    out: *mut *mut QcfPanel,
) -> QcfStatus {
    if path.is_null() || out.is_null() {
        set_error("null pointer argument");
        return QcfStatus::NullPointer;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p.to_string(),
        Err(_) => {
            set_error("path is not valid UTF-8");
            return QcfStatus::InvalidArgument;
        }
    };
    catch(move || {
        let mut panel = Panel::from_csv_path(Path::new(&path))?;
        if standardize {
            panel.standardize()?;
        }
        let handle = Box::new(QcfPanel { inner: panel });
        unsafe { *out = Box::into_raw(handle) };
        Ok(QcfStatus::Ok)
    })
}

/// Build a panel from parallel arrays: `times[i]`, `units[i]` index the
/// observation's period and unit, `y[i]` is the outcome and
/// `x[i*d .. (i+1)*d]` its characteristics.
///
/// # Safety
/// All arrays must hold at least `n_obs` (respectively `n_obs * d`)
/// readable elements.
#[no_mangle]
pub unsafe extern "C" fn qcf_panel_from_arrays(
    times: *const i64,
    units: *const i64,
    y: *const f64,
    x: *const f64,
    n_obs: usize,
    d: usize,
    out: *mut *mut QcfPanel,
) -> QcfStatus {
    if times.is_null() || units.is_null() || y.is_null() || x.is_null() || out.is_null() {
        set_error("null pointer argument");
        return QcfStatus::NullPointer;
    }
    let times = std::slice::from_raw_parts(times, n_obs).to_vec();
    let units = std::slice::from_raw_parts(units, n_obs).to_vec();
    let y = std::slice::from_raw_parts(y, n_obs).to_vec();
    let x = std::slice::from_raw_parts(x, n_obs * d).to_vec();
    catch(move || {
        let observations: Vec<Observation> = (0..n_obs)
            .map(|i| Observation {
                time: times[i].to_string(),
                unit: units[i].to_string(),
                y: y[i],
                x: x[i * d..(i + 1) * d].to_vec(),
            })
            .collect();
        let panel = Panel::from_observations(observations)?;
        let handle = Box::new(QcfPanel { inner: panel });
        unsafe { *out = Box::into_raw(handle) };
        Ok(QcfStatus::Ok)
    })
}

/// # Safety
/// `panel` must be a handle produced by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn qcf_panel_free(panel: *mut QcfPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Panel dimensions: units, periods, characteristics, total rows.
///
/// # Safety
/// `panel` must be a live handle; out-pointers may be NULL to skip a field.
#[no_mangle]
pub unsafe extern "C" fn qcf_panel_dims(
    panel: *const QcfPanel,
    n_units: *mut usize,
    n_periods: *mut usize,
    d: *mut usize,
    n_total: *mut usize,
) -> QcfStatus {
    if panel.is_null() {
        set_error("null panel handle");
        return QcfStatus::NullPointer;
    }
    let p = &(*panel).inner;
    if !n_units.is_null() {
        *n_units = p.n_units();
    }
    if !n_periods.is_null() {
        *n_periods = p.n_periods();
    }
    if !d.is_null() {
        *d = p.dim();
    }
    if !n_total.is_null() {
        *n_total = p.n_total();
    }
    QcfStatus::Ok
}

/// Fit the three-step estimator.
///
/// # Safety
/// `panel` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qcf_fit(
    panel: *const QcfPanel,
    tau: f64,
    r: usize,
    m: usize,
    ridge: f64,
    out: *mut *mut QcfModel,
) -> QcfStatus {
    if panel.is_null() || out.is_null() {
        set_error("null pointer argument");
        return QcfStatus::NullPointer;
    }
    let panel_ref = &(*panel).inner;
    let panel_clone = panel_ref.clone();
    catch(move || {
        let fit = fit_qcf(&panel_clone, &FitConfig { tau, r, m, ridge })?;
        let handle = Box::new(QcfModel {
            inner: fit,
            fitted_panel: panel_clone,
        });
        unsafe { *out = Box::into_raw(handle) };
        Ok(QcfStatus::Ok)
    })
}

/// # Safety
/// `model` must be a handle produced by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn qcf_model_free(model: *mut QcfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model dimensions: periods, factor count, truncation order, covariate
/// dimension and sieve size.
///
/// # Safety
/// `model` must be a live handle; out-pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn qcf_model_dims(
    model: *const QcfModel,
    t: *mut usize,
    r: *mut usize,
    m: *mut usize,
    d: *mut usize,
    basis_len: *mut usize,
) -> QcfStatus {
    if model.is_null() {
        set_error("null model handle");
        return QcfStatus::NullPointer;
    }
    let fit = &(*model).inner;
    if !t.is_null() {
        *t = fit.n_periods();
    }
    if !r.is_null() {
        *r = fit.config.r;
    }
    if !m.is_null() {
        *m = fit.config.m;
    }
    if !d.is_null() {
        *d = fit.dim();
    }
    if !basis_len.is_null() {
        *basis_len = fit.basis.len();
    }
    QcfStatus::Ok
}

unsafe fn copy_matrix(
    data: impl Iterator<Item = f64>,
    expected: usize,
    buf: *mut f64,
    len: usize,
) -> QcfStatus {
    if buf.is_null() {
        set_error("null buffer");
        return QcfStatus::NullPointer;
    }
    if len < expected {
        set_error(&format!("buffer holds {len} entries, need {expected}"));
        return QcfStatus::InvalidArgument;
    }
    let slice = std::slice::from_raw_parts_mut(buf, expected);
    for (slot, v) in slice.iter_mut().zip(data) {
        *slot = v;
    }
    QcfStatus::Ok
}

/// Copy the `T × r` factor matrix (row-major).
///
/// # Safety
/// `model` must be live; `buf` must hold `len >= T*r` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qcf_model_factors(
    model: *const QcfModel,
    buf: *mut f64,
    len: usize,
) -> QcfStatus {
    if model.is_null() {
        set_error("null model handle");
        return QcfStatus::NullPointer;
    }
    let fit = &(*model).inner;
    let f = &fit.factors.factors;
    copy_matrix(f.iter().copied(), f.len(), buf, len)
}

/// Copy the `d × r` index-parameter matrix (row-major).
///
/// # Safety
/// As [`qcf_model_factors`], with `len >= d*r`.
#[no_mangle]
pub unsafe extern "C" fn qcf_model_theta(
    model: *const QcfModel,
    buf: *mut f64,
    len: usize,
) -> QcfStatus {
    if model.is_null() {
        set_error("null model handle");
        return QcfStatus::NullPointer;
    }
    let fit = &(*model).inner;
    copy_matrix(fit.thetas.iter().copied(), fit.thetas.len(), buf, len)
}

/// Copy the `m × r` sieve-coefficient matrix (row-major).
///
/// # Safety
/// As [`qcf_model_factors`], with `len >= m*r`.
#[no_mangle]
pub unsafe extern "C" fn qcf_model_loading_coefficients(
    model: *const QcfModel,
    buf: *mut f64,
    len: usize,
) -> QcfStatus {
    if model.is_null() {
        set_error("null model handle");
        return QcfStatus::NullPointer;
    }
    let fit = &(*model).inner;
    copy_matrix(fit.b.iter().copied(), fit.b.len(), buf, len)
}

/// Evaluate the loading function `λ̂_k(x'θ̂_k)` (zero-based `k`).
///
/// # Safety
/// `x` must hold `d` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qcf_model_eval_loading(
    model: *const QcfModel,
    k: usize,
    x: *const f64,
    d: usize,
    out: *mut f64,
) -> QcfStatus {
    if model.is_null() || x.is_null() || out.is_null() {
        set_error("null pointer argument");
        return QcfStatus::NullPointer;
    }
    let fit = &(*model).inner;
    if k >= fit.config.r {
        set_error(&format!("factor index {k} out of range"));
        return QcfStatus::InvalidArgument;
    }
    if d != fit.dim() {
        set_error(&format!("x has length {d}, expected {}", fit.dim()));
        return QcfStatus::InvalidArgument;
    }
    let xs = std::slice::from_raw_parts(x, d);
    *out = fit.loading(k, xs);
    QcfStatus::Ok
}

/// In-sample metric bundle of the fit on its own panel.
///
/// # Safety
/// `model` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qcf_model_metrics(
    model: *const QcfModel,
    out: *mut QcfMetrics,
) -> QcfStatus {
    if model.is_null() || out.is_null() {
        set_error("null pointer argument");
        return QcfStatus::NullPointer;
    }
    let model_ref = &*model;
    let fit = &model_ref.inner;
    let panel = &model_ref.fitted_panel;
    let tau = fit.config.tau;
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        let fitted = fit.fitted_on(panel)?;
        metric_bundle(&QuantileFit::full(tau, fitted), panel)
    }));
    match result {
        Ok(Ok(bundle)) => {
            *out = QcfMetrics {
                qhe: bundle.qhe,
                aqe: bundle.aqe,
                r1_total: bundle.r1_total,
                r1_time_series: bundle.r1_time_series,
                r1_cross_section: bundle.r1_cross_section,
            };
            QcfStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            QcfStatus::Panic
        }
    }
}

/// Plug-in 95% confidence half-widths and estimates for factor `k`'s index
/// parameter. Writes `d` estimates and `d` standard errors.
///
/// # Safety
/// `model` must be live; both buffers must hold `d` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qcf_model_theta_inference(
    model: *const QcfModel,
    k: usize,
    bandwidth_const: f64,
    estimates: *mut f64,
    standard_errors: *mut f64,
) -> QcfStatus {
    if model.is_null() || estimates.is_null() || standard_errors.is_null() {
        set_error("null pointer argument");
        return QcfStatus::NullPointer;
    }
    let model_ref = &*model;
    let fit = &model_ref.inner;
    let d = fit.dim();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        let cov = theta_covariance(
            &model_ref.fitted_panel,
            fit,
            k,
            &InferenceConfig {
                bandwidth_const,
                bandwidth: None,
            },
        )?;
        let theta = fit.thetas.column(k);
        let intervals = theta_confidence_intervals(theta, &cov, 0.95)?;
        Ok::<_, qcf::Error>((cov, intervals))
    }));
    match result {
        Ok(Ok((cov, _intervals))) => {
            let est = std::slice::from_raw_parts_mut(estimates, d);
            let se = std::slice::from_raw_parts_mut(standard_errors, d);
            for j in 0..d {
                est[j] = fit.thetas[[j, k]];
                se[j] = (cov.matrix[[j, j]] / cov.nt_effective).max(0.0).sqrt();
            }
            QcfStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            QcfStatus::Panic
        }
    }
}

/// Wald test of `H0: θ_{k(component)} = 0` (zero-based component). Writes
/// the statistic and p-value.
///
/// # Safety
/// `model` must be live; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn qcf_model_wald_component(
    model: *const QcfModel,
    k: usize,
    component: usize,
    bandwidth_const: f64,
    statistic: *mut f64,
    p_value: *mut f64,
) -> QcfStatus {
    if model.is_null() || statistic.is_null() || p_value.is_null() {
        set_error("null pointer argument");
        return QcfStatus::NullPointer;
    }
    let model_ref = &*model;
    let fit = &model_ref.inner;
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        let cov = theta_covariance(
            &model_ref.fitted_panel,
            fit,
            k,
            &InferenceConfig {
                bandwidth_const,
                bandwidth: None,
            },
        )?;
        wald_test(
            fit.thetas.column(k),
            cov.matrix.view(),
            &[component],
            cov.nt_effective,
        )
    }));
    match result {
        Ok(Ok(res)) => {
            *statistic = res.statistic;
            *p_value = res.p_value;
            QcfStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            QcfStatus::Panic
        }
    }
}

/// Persist a fitted model (matrices + JSON manifest) under `dir`.
///
/// # Safety
/// `model` must be live; `dir` must be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn qcf_model_save(model: *const QcfModel, dir: *const c_char) -> QcfStatus {
    if model.is_null() || dir.is_null() {
        set_error("null pointer argument");
        return QcfStatus::NullPointer;
    }
    let dir = match CStr::from_ptr(dir).to_str() {
        Ok(p) => p.to_string(),
        Err(_) => {
            set_error("path is not valid UTF-8");
            return QcfStatus::InvalidArgument;
        }
    };
    let model_ref = &*model;
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        qcf::artifacts::save_fit(
            Path::new(&dir),
            &model_ref.inner,
            model_ref.fitted_panel.standardization(),
            None,
        )
    }));
    match result {
        Ok(Ok(())) => QcfStatus::Ok,
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            QcfStatus::Panic
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_message_roundtrip() {
        set_error("boom");
        let mut buf = vec![0i8; 16];
        let len =
            unsafe { qcf_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
        assert_eq!(len, 4);
        let s = unsafe { CStr::from_ptr(buf.as_ptr() as *const c_char) };
        assert_eq!(s.to_str().unwrap(), "boom");
    }
}

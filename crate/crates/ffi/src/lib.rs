//! C interface to the `twophase` library.
//!
//! Every function returns a [`TpStatus`]; on failure the message is available
//! from [`tp_last_error_message`] on the same thread. Objects cross the
//! boundary as opaque handles released with the matching `*_free` function.
//! Matrices are dense row-major arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::DMatrix;
use twophase::calibration::{rake_weights, AuxiliaryMatrix};
use twophase::designs::{Scenario, ScenarioKind};
use twophase::diagnostics::{kernel_regression, loo_bandwidth, BandwidthGrid};
use twophase::glm::{fit_glm, DesignMatrix, Family, GlmFit};
use twophase::harness::{run_monte_carlo, ExperimentConfig, MonteCarloReport};
use twophase::imputation::rubin_combine;
use twophase::oracle::pseudo_true_oracle;
use twophase::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpStatus {
    Ok = 0,
    /// Null pointer, bad dimension or out-of-range argument.
    InvalidArgument = 1,
    NonConvergence = 2,
    SingularDesign = 3,
    /// Calibration failed or auxiliaries are collinear.
    CalibrationFailure = 4,
    DegenerateVariance = 5,
    ConfigError = 6,
    IoError = 7,
    DataError = 8,
    /// A Rust panic was caught at the boundary.
    InternalError = 9,
}

/// Outcome family for [`tp_glm_fit`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpFamily {
    Linear = 0,
    Logistic = 1,
}

/// Simulation scenario for [`tp_pseudo_true`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpScenario {
    CaseControl = 0,
    SurrogateAdditive = 1,
    SurrogateMultiplicative = 2,
}

/// Opaque fitted regression.
pub struct TpGlmFit(GlmFit);

/// Opaque experiment configuration.
pub struct TpExperiment(ExperimentConfig);

/// Opaque Monte Carlo report.
pub struct TpReport(MonteCarloReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TpStatus {
    match e {
        Error::NonConvergence(_) => TpStatus::NonConvergence,
        Error::SingularDesign(_) => TpStatus::SingularDesign,
        Error::CalibrationNonConvergence(_) | Error::CollinearAuxiliaries(_) => TpStatus::CalibrationFailure,
        Error::DegenerateVariance(_) | Error::DegenerateKernel(_) => TpStatus::DegenerateVariance,
        Error::Config(_) => TpStatus::ConfigError,
        Error::Io(_) => TpStatus::IoError,
        Error::SchemaError(_)
        | Error::ParseError { .. }
        | Error::EmptySource(_)
        | Error::EmptySupport(_)
        | Error::InsufficientControls { .. } => TpStatus::DataError,
        Error::InvalidInput(_) | Error::DimensionMismatch { .. } => TpStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Error>>(f: F) -> TpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TpStatus::Ok
        }
        Ok(Err(e)) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(_) => {
            set_error("internal error".into());
            TpStatus::InternalError
        }
    }
}

fn invalid(what: &str) -> Error {
    Error::InvalidInput(what.to_string())
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Error> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to `len` writable values.
unsafe fn output<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Error> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the full message
/// length, or 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn tp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            0
        }
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Fits a linear or logistic regression by estimating equations.
/// `x` is `n × p` row-major and already contains any intercept column;
/// `weights` may be null for unit weights.
///
/// # Safety
/// Array arguments must point to the stated number of values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_glm_fit(
    family: TpFamily,
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    weights: *const f64,
    out: *mut *mut TpGlmFit,
) -> TpStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = ptr::null_mut();
        if n == 0 || p == 0 {
            return Err(invalid("empty design"));
        }
        let xs = input(x, n * p, "x")?;
        let ys = input(y, n, "y")?;
        let w = if weights.is_null() {
            vec![1.0; n]
        } else {
            input(weights, n, "weights")?.to_vec()
        };
        let design = DesignMatrix::new(
            DMatrix::from_row_slice(n, p, xs),
            (0..p).map(|j| format!("x{j}")).collect(),
        )?;
        let family = match family {
            TpFamily::Linear => Family::Linear,
            TpFamily::Logistic => Family::Logistic,
        };
        let fit = fit_glm(family, &design, ys, &w)?;
        *out = Box::into_raw(Box::new(TpGlmFit(fit)));
        Ok(())
    })
}

/// Number of coefficients of a fit (0 for a null handle).
///
/// # Safety
/// `fit` must be null or a live handle from [`tp_glm_fit`].
#[no_mangle]
pub unsafe extern "C" fn tp_glm_fit_ncoef(fit: *const TpGlmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.p())
}

/// Copies the `p` coefficients into `out`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `p` values.
#[no_mangle]
pub unsafe extern "C" fn tp_glm_fit_coefficients(fit: *const TpGlmFit, out: *mut f64, p: usize) -> TpStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| invalid("fit is null"))?;
        let dst = output(out, p, "out")?;
        if p != f.0.p() {
            return Err(Error::DimensionMismatch { expected: f.0.p(), got: p });
        }
        dst.copy_from_slice(f.0.coefficients());
        Ok(())
    })
}

/// Copies the sandwich standard errors into `out`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `p` values.
#[no_mangle]
pub unsafe extern "C" fn tp_glm_fit_sandwich_se(fit: *const TpGlmFit, out: *mut f64, p: usize) -> TpStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| invalid("fit is null"))?;
        let dst = output(out, p, "out")?;
        if p != f.0.p() {
            return Err(Error::DimensionMismatch { expected: f.0.p(), got: p });
        }
        dst.copy_from_slice(&f.0.sandwich_std_errors());
        Ok(())
    })
}

/// Copies the `n × p` influence matrix, row-major, into `out`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `n * p` values.
#[no_mangle]
pub unsafe extern "C" fn tp_glm_fit_influence(fit: *const TpGlmFit, out: *mut f64, n: usize, p: usize) -> TpStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| invalid("fit is null"))?;
        if n != f.0.n() || p != f.0.p() {
            return Err(Error::DimensionMismatch {
                expected: f.0.n() * f.0.p(),
                got: n * p,
            });
        }
        let dst = output(out, n * p, "out")?;
        for i in 0..n {
            for j in 0..p {
                dst[i * p + j] = f.0.influence[(i, j)];
            }
        }
        Ok(())
    })
}

/// Releases a fit.
///
/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_glm_fit_free(fit: *mut TpGlmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Raking calibration of design weights. `aux` is the `n × q` cohort
/// auxiliary matrix (a constant column is added), `sampled[i]` is nonzero
/// for phase-two units and `pi` holds inclusion probabilities. On success
/// `g_out[i]` is the raking factor of unit `i` (0 for unsampled units) and
/// `max_residual` the largest scaled constraint violation.
///
/// # Safety
/// Arrays must have the stated lengths; `max_residual` may be null.
#[no_mangle]
pub unsafe extern "C" fn tp_rake(
    aux: *const f64,
    n: usize,
    q: usize,
    sampled: *const u8,
    pi: *const f64,
    g_out: *mut f64,
    max_residual: *mut f64,
) -> TpStatus {
    guard(|| {
        let h = input(aux, n * q, "aux")?;
        let r: Vec<bool> = input(sampled, n, "sampled")?.iter().map(|v| *v != 0).collect();
        let pi = input(pi, n, "pi")?;
        let g_dst = output(g_out, n, "g_out")?;
        let aux = AuxiliaryMatrix::with_constant(DMatrix::from_row_slice(n, q, h))?;
        let cw = rake_weights(&aux, &r, pi)?;
        g_dst.iter_mut().for_each(|v| *v = 0.0);
        for (i, g) in cw.sampled_index.iter().zip(&cw.g) {
            g_dst[*i] = *g;
        }
        if !max_residual.is_null() {
            *max_residual = cw.max_scaled_residual(&aux.totals());
        }
        Ok(())
    })
}

/// Rubin's rules over `m` completed-data analyses. `estimates` and
/// `variances` are `m × p` row-major; `theta_out` and `total_out` receive
/// the pooled estimate and total variance.
///
/// # Safety
/// Arrays must have the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tp_rubin_combine(
    estimates: *const f64,
    variances: *const f64,
    m: usize,
    p: usize,
    theta_out: *mut f64,
    total_out: *mut f64,
) -> TpStatus {
    guard(|| {
        let e = input(estimates, m * p, "estimates")?;
        let v = input(variances, m * p, "variances")?;
        let theta = output(theta_out, p, "theta_out")?;
        let total = output(total_out, p, "total_out")?;
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
            .map(|k| (e[k * p..(k + 1) * p].to_vec(), v[k * p..(k + 1) * p].to_vec()))
            .collect();
        let r = rubin_combine(&pairs)?;
        theta.copy_from_slice(&r.theta_bar);
        total.copy_from_slice(&r.total);
        Ok(())
    })
}

/// Pseudo-true `(α*, β*)` of the working model at `(β₀, δ₀)`.
///
/// # Safety
/// `alpha` and `beta` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_pseudo_true(
    scenario: TpScenario,
    beta0: f64,
    delta0: f64,
    alpha: *mut f64,
    beta: *mut f64,
) -> TpStatus {
    guard(|| {
        if alpha.is_null() || beta.is_null() {
            return Err(invalid("output pointer is null"));
        }
        let kind = match scenario {
            TpScenario::CaseControl => ScenarioKind::CaseControl,
            TpScenario::SurrogateAdditive => ScenarioKind::SurrogateAdditive,
            TpScenario::SurrogateMultiplicative => ScenarioKind::SurrogateMultiplicative,
        };
        let p = pseudo_true_oracle(&Scenario::for_kind(kind, beta0, delta0))?;
        *alpha = p.alpha;
        *beta = p.beta;
        Ok(())
    })
}

/// Gaussian-kernel Nadaraya–Watson fit at the data points.
///
/// # Safety
/// `x`, `y` and `fitted` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn tp_kernel_regression(
    x: *const f64,
    y: *const f64,
    n: usize,
    bandwidth: f64,
    fitted: *mut f64,
) -> TpStatus {
    guard(|| {
        let fit = kernel_regression(input(x, n, "x")?, input(y, n, "y")?, bandwidth)?;
        output(fitted, n, "fitted")?.copy_from_slice(&fit.fitted);
        Ok(())
    })
}

/// Leave-one-out cross-validated bandwidth on the default grid.
///
/// # Safety
/// `x` and `y` must hold `n` values; `bandwidth` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_loo_bandwidth(x: *const f64, y: *const f64, n: usize, bandwidth: *mut f64) -> TpStatus {
    guard(|| {
        if bandwidth.is_null() {
            return Err(invalid("bandwidth is null"));
        }
        *bandwidth = loo_bandwidth(input(x, n, "x")?, input(y, n, "y")?, &BandwidthGrid::default())?;
        Ok(())
    })
}

/// Parses a TOML experiment configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_experiment_from_toml(toml: *const c_char, out: *mut *mut TpExperiment) -> TpStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::from_toml(string(toml, "toml")?)?;
        *out = Box::into_raw(Box::new(TpExperiment(cfg)));
        Ok(())
    })
}

/// Runs an experiment to completion.
///
/// # Safety
/// `experiment` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_experiment_run(experiment: *const TpExperiment, out: *mut *mut TpReport) -> TpStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = ptr::null_mut();
        let cfg = experiment.as_ref().ok_or_else(|| invalid("experiment is null"))?;
        let report = run_monte_carlo(&cfg.0)?;
        *out = Box::into_raw(Box::new(TpReport(report)));
        Ok(())
    })
}

/// Releases an experiment.
///
/// # Safety
/// `experiment` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_experiment_free(experiment: *mut TpExperiment) {
    if !experiment.is_null() {
        drop(Box::from_raw(experiment));
    }
}

/// Looks up one report value by grid point, estimator label and metric.
///
/// # Safety
/// `report` must be a live handle, the strings NUL-terminated and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_report_value(
    report: *const TpReport,
    beta0: f64,
    delta0: f64,
    estimator: *const c_char,
    metric: *const c_char,
    value: *mut f64,
) -> TpStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| invalid("report is null"))?;
        if value.is_null() {
            return Err(invalid("value is null"));
        }
        let est = string(estimator, "estimator")?;
        let met = string(metric, "metric")?;
        *value = r
            .0
            .value((beta0, delta0), est, met)
            .ok_or_else(|| invalid(&format!("no entry for {est}/{met} at ({beta0}, {delta0})")))?;
        Ok(())
    })
}

/// Renders the report as CSV. The string must be released with [`tp_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tp_report_to_csv(report: *const TpReport, out: *mut *mut c_char) -> TpStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = ptr::null_mut();
        let r = report.as_ref().ok_or_else(|| invalid("report is null"))?;
        let mut buf = Vec::new();
        r.0.write_csv(&mut buf)?;
        *out = CString::new(buf).map_err(|e| Error::Io(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Releases a report.
///
/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_report_free(report: *mut TpReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

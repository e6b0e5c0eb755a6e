//! C ABI over `hazmatch`.
//!
//! Objects are opaque handles created by `hm_dataset_from_*` or `hm_estimate`
//! and released with the matching `*_free`. Every fallible call returns an
//! [`HmStatus`]; the message of the last failure on the calling thread is
//! available from [`hm_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hazmatch::dataset::{load_csv, CsvSchema, Dataset, Subject};
use hazmatch::inference::{estimate_all, EstimateConfig, Estimator, InferenceReport, Method};
use hazmatch::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    InvalidData = 4,
    Separation = 5,
    Numerical = 6,
    NotAvailable = 7,
    Panic = 99,
}

/// Variance method selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmMethod {
    Software = 0,
    Asymptotic = 1,
    NaiveBootstrap = 2,
    DoubleResampling = 3,
}

impl From<HmMethod> for Method {
    fn from(m: HmMethod) -> Self {
        match m {
            HmMethod::Software => Method::Software,
            HmMethod::Asymptotic => Method::Asymptotic,
            HmMethod::NaiveBootstrap => Method::NaiveBootstrap,
            HmMethod::DoubleResampling => Method::DoubleResampling,
        }
    }
}

pub const HM_MASK_SOFTWARE: u32 = 1;
pub const HM_MASK_ASYMPTOTIC: u32 = 1 << 1;
pub const HM_MASK_NAIVE_BOOTSTRAP: u32 = 1 << 2;
pub const HM_MASK_DOUBLE_RESAMPLING: u32 = 1 << 3;
pub const HM_MASK_ALL: u32 = 0xf;

/// Analysis settings. Start from [`hm_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HmOptions {
    /// Bitwise OR of `HM_MASK_*`.
    pub methods: u32,
    /// Bootstrap replicates; at least 100 when a bootstrap method is requested.
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Opaque dataset.
pub struct HmDataset {
    inner: Dataset,
}

/// Opaque result of [`hm_estimate`].
pub struct HmReport {
    inner: InferenceReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> HmStatus {
    match err {
        Error::Io { .. } => HmStatus::Io,
        Error::Csv(_) | Error::MissingColumn(_) | Error::InvalidRow { .. } | Error::Invalid(_) => {
            HmStatus::InvalidData
        }
        Error::EmptyArm { .. } | Error::NoEvents | Error::ArmTooSmall { .. } => HmStatus::InvalidData,
        Error::Separation { .. } | Error::MonotoneLikelihood(_) => HmStatus::Separation,
        Error::Config(_) => HmStatus::InvalidArgument,
        _ => HmStatus::Numerical,
    }
}

struct Fail(HmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), format!("{}: {e}", e.code()))
    }
}

fn null(what: &str) -> Fail {
    Fail(HmStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(HmStatus::InvalidArgument, msg.into())
}

/// Run `f`, record its failure and turn panics into [`HmStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HmStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            HmStatus::Panic
        }
    }
}

unsafe fn opt_str(p: *const c_char, what: &str) -> Result<Option<String>, Fail> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(|s| Some(s.to_string()))
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn hm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a dataset from column arrays. `x` is row-major `n x d`; `treated`
/// and `event` hold 0 or 1.
///
/// # Safety
/// Every array must hold the stated number of elements and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hm_dataset_from_arrays(
    n: usize,
    d: usize,
    x: *const f64,
    treated: *const u8,
    time: *const f64,
    event: *const u8,
    out: *mut *mut HmDataset,
) -> HmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n
            .checked_mul(d)
            .ok_or_else(|| invalid("n * d overflows"))?;
        let x = slice(x, len, "x")?;
        let w = slice(treated, n, "treated")?;
        let t = slice(time, n, "time")?;
        let e = slice(event, n, "event")?;
        let flag = |v: u8, i: usize, what: &str| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(invalid(format!("{what}[{i}] = {v} is not 0 or 1"))),
        };
        let mut subjects = Vec::with_capacity(n);
        for i in 0..n {
            subjects.push(Subject {
                id: i,
                x: x[i * d..(i + 1) * d].to_vec(),
                treated: flag(w[i], i, "treated")?,
                time: t[i],
                event: flag(e[i], i, "event")?,
            });
        }
        let ds = Dataset::new(subjects)?;
        *out = Box::into_raw(Box::new(HmDataset { inner: ds }));
        Ok(())
    })
}

/// Read a dataset from CSV. NULL column names select `w`, `u` and `delta`;
/// every other column is a covariate.
///
/// # Safety
/// String arguments must be NUL-terminated or NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_dataset_from_csv(
    path: *const c_char,
    col_w: *const c_char,
    col_time: *const c_char,
    col_event: *const c_char,
    out: *mut *mut HmDataset,
) -> HmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = opt_str(path, "path")?.ok_or_else(|| null("path"))?;
        let d = CsvSchema::default();
        let schema = CsvSchema {
            treatment: opt_str(col_w, "col_w")?.unwrap_or(d.treatment),
            time: opt_str(col_time, "col_time")?.unwrap_or(d.time),
            event: opt_str(col_event, "col_event")?.unwrap_or(d.event),
            covariates: Vec::new(),
        };
        let ds = load_csv(path, &schema)?;
        *out = Box::into_raw(Box::new(HmDataset { inner: ds }));
        Ok(())
    })
}

/// Number of subjects; 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn hm_dataset_len(ds: *const HmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hm_dataset_free(ds: *mut HmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// All four methods, `B = 1000`, `alpha = 0.05`, seed 0.
#[no_mangle]
pub extern "C" fn hm_options_default() -> HmOptions {
    let d = EstimateConfig::default();
    HmOptions {
        methods: HM_MASK_ALL,
        b: d.b,
        alpha: d.alpha,
        seed: d.seed,
    }
}

fn methods_of(mask: u32) -> Result<Vec<Method>, Fail> {
    if mask == 0 || mask & !HM_MASK_ALL != 0 {
        return Err(invalid(format!("bad method mask {mask:#x}")));
    }
    Ok(Method::ALL
        .into_iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, m)| m)
        .collect())
}

/// Fit the matching estimator with the requested variance methods.
///
/// # Safety
/// `ds` must be a live dataset handle, `opts` NULL (defaults) or readable,
/// and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_estimate(
    ds: *const HmDataset,
    opts: *const HmOptions,
    out: *mut *mut HmReport,
) -> HmStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let o = opts.as_ref().copied().unwrap_or_else(|| hm_options_default());
        let cfg = EstimateConfig {
            estimators: vec![Estimator::Psm],
            methods: methods_of(o.methods)?,
            b: o.b,
            alpha: o.alpha,
            seed: o.seed,
            ..EstimateConfig::default()
        };
        let report = estimate_all(&ds.inner, &cfg, None)?;
        *out = Box::into_raw(Box::new(HmReport { inner: report }));
        Ok(())
    })
}

/// Estimated log hazard ratio.
///
/// # Safety
/// `r` must be a live report handle and `beta` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_report_beta(r: *const HmReport, beta: *mut f64) -> HmStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("r"))?;
        *beta.as_mut().ok_or_else(|| null("beta"))? = r.inner.beta_hat;
        Ok(())
    })
}

/// Variance and `(1 - alpha)` interval for the log hazard ratio.
/// [`HmStatus::NotAvailable`] when the method was not requested.
///
/// # Safety
/// `r` must be a live report handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hm_report_interval(
    r: *const HmReport,
    method: HmMethod,
    variance: *mut f64,
    lower: *mut f64,
    upper: *mut f64,
) -> HmStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("r"))?;
        if variance.is_null() || lower.is_null() || upper.is_null() {
            return Err(null("variance/lower/upper"));
        }
        let m = Method::from(method);
        let e = r.inner.methods.get(&m).ok_or_else(|| {
            Fail(HmStatus::NotAvailable, format!("method `{m}` was not requested"))
        })?;
        *variance = e.variance;
        *lower = e.ci_low;
        *upper = e.ci_high;
        Ok(())
    })
}

/// The full report as pretty-printed JSON. Release with [`hm_string_free`].
///
/// # Safety
/// `r` must be a live report handle and `json` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_report_json(r: *const HmReport, json: *mut *mut c_char) -> HmStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("r"))?;
        if json.is_null() {
            return Err(null("json"));
        }
        let text = serde_json::to_string_pretty(&r.inner).map_err(Error::from)?;
        *json = CString::new(text)
            .map_err(|_| invalid("report contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `r` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hm_report_free(r: *mut HmReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_selects_methods_in_order() {
        let m = methods_of(HM_MASK_DOUBLE_RESAMPLING | HM_MASK_SOFTWARE).ok().unwrap();
        assert_eq!(m, vec![Method::Software, Method::DoubleResampling]);
        assert_eq!(methods_of(HM_MASK_ALL).ok().unwrap(), Method::ALL.to_vec());
        assert!(methods_of(0).is_err());
        assert!(methods_of(0x10).is_err());
    }

    #[test]
    fn panics_become_status() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, HmStatus::Panic);
        let msg = unsafe { CStr::from_ptr(hm_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
        assert_eq!(guard(|| Ok(())), HmStatus::Ok);
        assert!(hm_last_error().is_null());
    }
}

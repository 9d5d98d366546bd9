//! C interface to regcheck.
//!
//! Every entry point returns an [`RcStatus`]; on failure the message is kept
//! per thread and read with [`rc_last_error_message`]. Panics never cross
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use regcheck::models::{
    ConstantVariance, Dataset, ExpConstantVariance, Linear, LinearExpIndex, LogLinearVariance, MeanModel,
    SingleIndexQuadratic, VarianceModel,
};
use regcheck::pipeline::{
    run_mean_test, run_variance_test, BootstrapWeight, Method, StatisticKind, TestConfig, TestResult, WeightSpec,
};
use regcheck::stats::BrownianCvmTable;
use regcheck::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Dimension = 3,
    NonFinite = 4,
    Singular = 5,
    NoConvergence = 6,
    NonPositiveVariance = 7,
    DegenerateWeight = 8,
    Unsupported = 9,
    Bootstrap = 10,
    Io = 11,
    Panic = 12,
}

pub const RC_STAT_CVM: i32 = 0;
pub const RC_STAT_TCVM: i32 = 1;

pub const RC_METHOD_BOOTSTRAP: i32 = 0;
pub const RC_METHOD_ASYMPTOTIC: i32 = 1;

pub const RC_WEIGHT_OMNIBUS: i32 = 0;
pub const RC_WEIGHT_DIRECTIONAL: i32 = 1;
pub const RC_WEIGHT_FIXED: i32 = 2;

pub const RC_MEAN_LINEAR: i32 = 0;
pub const RC_MEAN_SINGLE_INDEX_QUADRATIC: i32 = 1;
pub const RC_MEAN_LINEAR_EXP_INDEX: i32 = 2;

pub const RC_VAR_CONSTANT: i32 = 0;
pub const RC_VAR_EXP_CONSTANT: i32 = 1;
pub const RC_VAR_LOG_LINEAR: i32 = 2;

/// Opaque dataset handle.
pub struct RcDataset {
    inner: Dataset,
}

/// Test settings. Start from [`rc_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RcOptions {
    /// `RC_STAT_*`.
    pub statistic: i32,
    /// `RC_METHOD_*`.
    pub method: i32,
    /// Bootstrap replications.
    pub bootstrap_size: usize,
    pub level: f64,
    /// Bandwidth constant `c` in `h = c n^(-1/10)`.
    pub bandwidth_c: f64,
    pub trim: f64,
    pub v_n: f64,
    pub seed: u64,
    /// `RC_WEIGHT_*`.
    pub weight: i32,
    /// Alternative class for directional weights: `RC_MEAN_*` in the mean
    /// test, `RC_VAR_*` in the variance test.
    pub alternative: i32,
    /// `g(X_i)` for fixed weights, `fixed_len` values; may be null otherwise.
    pub fixed_weight: *const f64,
    pub fixed_len: usize,
    /// Nonzero keeps the original-sample weight in the bootstrap.
    pub original_bootstrap_weight: i32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct RcResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: i32,
    pub level: f64,
    pub rho_hat: f64,
    /// NaN for the raw statistic.
    pub bandwidth: f64,
    pub n: usize,
    pub d: usize,
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

fn status_of(e: &Error) -> RcStatus {
    match e {
        Error::Dimension(_) => RcStatus::Dimension,
        Error::NonFinite(_) => RcStatus::NonFinite,
        Error::InvalidInput(_) | Error::Csv(_) | Error::Json(_) => RcStatus::InvalidInput,
        Error::Singular { .. } => RcStatus::Singular,
        Error::NoConvergence { .. } => RcStatus::NoConvergence,
        Error::NonPositiveVariance { .. } => RcStatus::NonPositiveVariance,
        Error::DegenerateWeight(_) => RcStatus::DegenerateWeight,
        Error::Unsupported(_) => RcStatus::Unsupported,
        Error::Bootstrap { .. } => RcStatus::Bootstrap,
        Error::Io(_) => RcStatus::Io,
    }
}

fn guard<F: FnOnce() -> Result<(), (RcStatus, String)>>(f: F) -> RcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            RcStatus::Panic
        }
    }
}

fn lib(e: Error) -> (RcStatus, String) {
    (status_of(&e), e.to_string())
}

fn invalid(msg: impl Into<String>) -> (RcStatus, String) {
    (RcStatus::InvalidInput, msg.into())
}

fn null(what: &str) -> (RcStatus, String) {
    (RcStatus::NullPointer, format!("{what} is null"))
}

/// Default settings: bootstrap CvM with 300 replications at level 0.05.
#[no_mangle]
pub extern "C" fn rc_options_default() -> RcOptions {
    let cfg = TestConfig::default();
    RcOptions {
        statistic: RC_STAT_CVM,
        method: RC_METHOD_BOOTSTRAP,
        bootstrap_size: 300,
        level: cfg.level,
        bandwidth_c: cfg.kernel.c,
        trim: cfg.trim,
        v_n: cfg.v_n,
        seed: 0,
        weight: RC_WEIGHT_OMNIBUS,
        alternative: RC_MEAN_LINEAR,
        fixed_weight: std::ptr::null(),
        fixed_len: 0,
        original_bootstrap_weight: 0,
    }
}

/// Copy `n` rows of `d` predictors (row-major `x`) and `n` responses into a
/// new dataset. Free it with [`rc_dataset_free`].
///
/// # Safety
/// `x` must point to `n * d` doubles and `y` to `n` doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_new(
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut RcDataset,
) -> RcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if x.is_null() || y.is_null() {
            return Err(null("data"));
        }
        let len = n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?;
        let xs = std::slice::from_raw_parts(x, len).to_vec();
        let ys = std::slice::from_raw_parts(y, n).to_vec();
        let inner = Dataset::new(xs, ys, d).map_err(lib)?;
        *out = Box::into_raw(Box::new(RcDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`rc_dataset_new`] and not be freed twice. Null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_free(ds: *mut RcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_n(ds: *const RcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n())
}

/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_d(ds: *const RcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.d())
}

fn mean_model(code: i32, d: usize) -> Result<Arc<dyn MeanModel>, (RcStatus, String)> {
    Ok(match code {
        RC_MEAN_LINEAR => Arc::new(Linear { dim: d }),
        RC_MEAN_SINGLE_INDEX_QUADRATIC => Arc::new(SingleIndexQuadratic { dim: d }),
        RC_MEAN_LINEAR_EXP_INDEX => Arc::new(LinearExpIndex { dim: d }),
        other => return Err(invalid(format!("unknown mean model code {other}"))),
    })
}

fn variance_model(code: i32, d: usize) -> Result<Arc<dyn VarianceModel>, (RcStatus, String)> {
    Ok(match code {
        RC_VAR_CONSTANT => Arc::new(ConstantVariance),
        RC_VAR_EXP_CONSTANT => Arc::new(ExpConstantVariance),
        RC_VAR_LOG_LINEAR => Arc::new(LogLinearVariance { dim: d, intercept: true }),
        other => return Err(invalid(format!("unknown variance model code {other}"))),
    })
}

fn config(o: &RcOptions) -> Result<(TestConfig, Method), (RcStatus, String)> {
    let mut cfg = TestConfig::default();
    cfg.statistic = match o.statistic {
        RC_STAT_CVM => StatisticKind::Cvm,
        RC_STAT_TCVM => StatisticKind::Tcvm,
        other => return Err(invalid(format!("unknown statistic code {other}"))),
    };
    cfg.level = o.level;
    cfg.kernel.c = o.bandwidth_c;
    cfg.trim = o.trim;
    cfg.v_n = o.v_n;
    cfg.seed = o.seed;
    if o.original_bootstrap_weight != 0 {
        cfg.bootstrap_weight = BootstrapWeight::Original;
    }
    cfg.validate().map_err(lib)?;
    let method = match o.method {
        RC_METHOD_BOOTSTRAP if o.bootstrap_size == 0 => return Err(invalid("bootstrap_size must be positive")),
        RC_METHOD_BOOTSTRAP => Method::Bootstrap { b: o.bootstrap_size },
        RC_METHOD_ASYMPTOTIC => Method::Asymptotic,
        other => return Err(invalid(format!("unknown method code {other}"))),
    };
    Ok((cfg, method))
}

unsafe fn fixed(o: &RcOptions) -> Result<WeightSpec, (RcStatus, String)> {
    if o.fixed_weight.is_null() {
        return Err(null("fixed_weight"));
    }
    Ok(WeightSpec::Fixed(std::slice::from_raw_parts(o.fixed_weight, o.fixed_len).to_vec()))
}

fn fill(r: &TestResult) -> RcResult {
    RcResult {
        statistic: r.statistic,
        critical_value: r.critical_value,
        p_value: r.p_value,
        reject: r.reject as i32,
        level: r.level,
        rho_hat: r.meta.rho_hat,
        bandwidth: r.meta.bandwidth.unwrap_or(f64::NAN),
        n: r.meta.n,
        d: r.meta.d,
    }
}

/// Test the mean model `model` (`RC_MEAN_*`).
///
/// # Safety
/// `ds` must be a live handle, `opts` and `out` valid pointers, and
/// `opts.fixed_weight` point to `opts.fixed_len` doubles when used.
#[no_mangle]
pub unsafe extern "C" fn rc_test_mean(
    ds: *const RcDataset,
    model: i32,
    opts: *const RcOptions,
    out: *mut RcResult,
) -> RcStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let o = opts.as_ref().ok_or_else(|| null("options"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (cfg, method) = config(o)?;
        let d = ds.inner.d();
        let m = mean_model(model, d)?;
        let spec = match o.weight {
            RC_WEIGHT_OMNIBUS => WeightSpec::Omnibus,
            RC_WEIGHT_DIRECTIONAL => WeightSpec::Directional(mean_model(o.alternative, d)?),
            RC_WEIGHT_FIXED => fixed(o)?,
            other => return Err(invalid(format!("unknown weight code {other}"))),
        };
        let r = run_mean_test(&ds.inner, m.as_ref(), &spec, method, &cfg).map_err(lib)?;
        *out = fill(&r);
        Ok(())
    })
}

/// Test the variance model `vmodel` (`RC_VAR_*`) with mean model `model`.
///
/// # Safety
/// As [`rc_test_mean`].
#[no_mangle]
pub unsafe extern "C" fn rc_test_variance(
    ds: *const RcDataset,
    model: i32,
    vmodel: i32,
    opts: *const RcOptions,
    out: *mut RcResult,
) -> RcStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let o = opts.as_ref().ok_or_else(|| null("options"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (cfg, method) = config(o)?;
        let d = ds.inner.d();
        let m = mean_model(model, d)?;
        let v = variance_model(vmodel, d)?;
        let spec = match o.weight {
            RC_WEIGHT_OMNIBUS => WeightSpec::Omnibus,
            RC_WEIGHT_DIRECTIONAL => WeightSpec::DirectionalVariance(variance_model(o.alternative, d)?),
            RC_WEIGHT_FIXED => fixed(o)?,
            other => return Err(invalid(format!("unknown weight code {other}"))),
        };
        let r = run_variance_test(&ds.inner, m.as_ref(), v.as_ref(), &spec, method, &cfg).map_err(lib)?;
        *out = fill(&r);
        Ok(())
    })
}

/// Quantile of `int_0^1 B(t)^2 dt` from the default table. The first call
/// builds the table unless `REGCHECK_CACHE_DIR` holds a copy.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_brownian_cvm_quantile(level: f64, out: *mut f64) -> RcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(invalid(format!("level {level} outside (0, 1)")));
        }
        *out = BrownianCvmTable::standard().quantile(level);
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn rc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn rc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

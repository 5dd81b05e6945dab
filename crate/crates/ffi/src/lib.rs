//! C ABI over the priu engine.
//!
//! Datasets and engines are opaque heap handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call
//! returns a [`PriuStatus`]; the message of the most recent failure on the
//! calling thread is available from [`priu_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use priu::bench::ingest::{ingest, DataFormat, IngestOptions};
use priu::capture::{load_cache, save_cache, train_and_capture, CacheMode, CaptureOptions};
use priu::engine::{Engine, Method};
use priu::model::{build_schedule, DeletionRequest, DenseMatrix, Features, Hyperparams, ModelKind, TrainingDataset};
use priu::trainer::TrainOptions;
use priu::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriuStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Invalid hyperparameters, options or method for the model.
    Config = 2,
    /// Malformed or inconsistent data, including shape mismatches.
    Data = 3,
    /// Divergence or another numeric failure.
    Numeric = 4,
    Io = 5,
    /// Unreadable cache, or a cache built from different data.
    Cache = 6,
    /// An output buffer has the wrong length.
    BufferSize = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriuModelKind {
    Linear = 0,
    Binary = 1,
    /// Needs a class count of at least 2.
    Multinomial = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriuCacheMode {
    DenseFull = 0,
    DenseSvd = 1,
    SparseLinearized = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriuMethod {
    Priu = 0,
    PriuOpt = 1,
    Basel = 2,
    ClosedForm = 3,
    Infl = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriuHyperparams {
    pub eta: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriuCaptureOptions {
    pub mode: PriuCacheMode,
    /// Relative spectral threshold for `DenseSvd`.
    pub epsilon: f64,
    /// Early-stop iteration for the logistic eigen path; negative for none.
    pub t_s: i64,
}

/// Opaque training dataset.
pub struct PriuDataset(TrainingDataset);

/// Opaque dataset plus provenance cache, ready for updates.
pub struct PriuEngine(Engine);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PriuStatus {
    match e {
        Error::Config(_) | Error::SymbolicLimit(_) | Error::ModeMismatch => PriuStatus::Config,
        Error::Divergence { .. } | Error::Numeric(_) | Error::UndefinedMetric(_) => PriuStatus::Numeric,
        Error::Io(_) => PriuStatus::Io,
        Error::Format(_) | Error::Version { .. } | Error::Fingerprint | Error::Truncated(_) | Error::CacheCorrupt(_) => {
            PriuStatus::Cache
        }
        _ => PriuStatus::Data,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), (PriuStatus, String)>>(f: F) -> PriuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PriuStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PriuStatus::Internal
        }
    }
}

fn fail(e: Error) -> (PriuStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PriuStatus, String) {
    (PriuStatus::NullArgument, format!("{what} is null"))
}

fn model_kind(kind: PriuModelKind, classes: u32) -> Result<ModelKind, (PriuStatus, String)> {
    match kind {
        PriuModelKind::Linear => Ok(ModelKind::Linear),
        PriuModelKind::Binary => Ok(ModelKind::BinaryLogistic),
        PriuModelKind::Multinomial if classes >= 2 => Ok(ModelKind::MultinomialLogistic {
            classes: classes as usize,
        }),
        PriuModelKind::Multinomial => Err((PriuStatus::Config, format!("multinomial model with {classes} classes"))),
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (PriuStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (PriuStatus::Config, "path is not valid UTF-8".into()))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn priu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn priu_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Dense row-major `n x m` features and `n` labels. Binary labels are ±1;
/// multinomial labels are class indices stored as doubles.
///
/// # Safety
/// `x` must point to `n * m` doubles, `y` to `n` doubles and `out` to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn priu_dataset_from_dense(
    x: *const f64,
    n: usize,
    m: usize,
    y: *const f64,
    kind: PriuModelKind,
    classes: u32,
    out: *mut *mut PriuDataset,
) -> PriuStatus {
    guard(|| {
        if x.is_null() || y.is_null() || out.is_null() {
            return Err(null("x, y or out"));
        }
        let len = n.checked_mul(m).ok_or((PriuStatus::Data, "n * m overflows".to_string()))?;
        let kind = model_kind(kind, classes)?;
        let data = std::slice::from_raw_parts(x, len).to_vec();
        let labels = std::slice::from_raw_parts(y, n).to_vec();
        let features = Features::Dense(DenseMatrix::new(n, m, data).map_err(fail)?);
        let ds = TrainingDataset::new(features, labels, kind).map_err(fail)?;
        *out = Box::into_raw(Box::new(PriuDataset(ds)));
        Ok(())
    })
}

/// Reads a CSV (label in the last column, no header) or LIBSVM file; the
/// format follows the extension.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn priu_dataset_load(
    path: *const c_char,
    kind: PriuModelKind,
    classes: u32,
    out: *mut *mut PriuDataset,
) -> PriuStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let opts = IngestOptions {
            format: DataFormat::from_path(path),
            kind: model_kind(kind, classes)?,
            ..Default::default()
        };
        let ds = ingest(path, &opts).map_err(fail)?;
        *out = Box::into_raw(Box::new(PriuDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn priu_dataset_free(ds: *mut PriuDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn priu_dataset_rows(ds: *const PriuDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

/// Number of feature columns, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn priu_dataset_cols(ds: *const PriuDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.m())
}

/// Trains on a copy of `ds` and captures the provenance cache. `opts` may
/// be null for a dense-full cache.
///
/// # Safety
/// `ds` and `hp` must be live, `opts` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn priu_engine_train(
    ds: *const PriuDataset,
    hp: *const PriuHyperparams,
    opts: *const PriuCaptureOptions,
    out: *mut *mut PriuEngine,
) -> PriuStatus {
    guard(|| {
        let (ds, hp) = match (ds.as_ref(), hp.as_ref()) {
            (Some(d), Some(h)) => (&d.0, *h),
            _ => return Err(null("ds or hp")),
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let hp = Hyperparams {
            eta: hp.eta,
            lambda: hp.lambda,
            batch_size: hp.batch_size,
            iterations: hp.iterations,
            seed: hp.seed,
            model_kind: ds.kind(),
        };
        hp.validate(ds.n()).map_err(fail)?;
        let mut capture = CaptureOptions::default();
        if let Some(o) = opts.as_ref() {
            capture.mode = match o.mode {
                PriuCacheMode::DenseFull => CacheMode::DenseFull,
                PriuCacheMode::DenseSvd => CacheMode::DenseSvd,
                PriuCacheMode::SparseLinearized => CacheMode::SparseLinearized,
            };
            capture.epsilon = o.epsilon;
            capture.t_s = usize::try_from(o.t_s).ok();
        }
        let schedule = build_schedule(ds.n(), &hp).map_err(fail)?;
        let (_, cache) = train_and_capture(ds, &hp, &schedule, &TrainOptions::default(), &capture).map_err(fail)?;
        let engine = Engine::new(ds.clone(), cache).map_err(fail)?;
        *out = Box::into_raw(Box::new(PriuEngine(engine)));
        Ok(())
    })
}

/// Pairs a copy of `ds` with a cache file written by `priu_engine_save` or
/// the command line tool.
///
/// # Safety
/// `ds` live, `path` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn priu_engine_load(
    ds: *const PriuDataset,
    path: *const c_char,
    out: *mut *mut PriuEngine,
) -> PriuStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cache = load_cache(path_arg(path)?).map_err(fail)?;
        let engine = Engine::new(ds.0.clone(), cache).map_err(fail)?;
        *out = Box::into_raw(Box::new(PriuEngine(engine)));
        Ok(())
    })
}

/// # Safety
/// `engine` live, `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn priu_engine_save(engine: *const PriuEngine, path: *const c_char) -> PriuStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        save_cache(&e.0.prepared.cache, path_arg(path)?).map_err(fail)
    })
}

/// # Safety
/// `engine` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn priu_engine_free(engine: *mut PriuEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Length of the parameter vector (`m`, or `q * m` for multinomial
/// models), or 0 for a null handle.
///
/// # Safety
/// `engine` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn priu_engine_param_dim(engine: *const PriuEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.0.ds.param_dim())
}

fn write_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), (PriuStatus, String)> {
    if out.is_null() {
        return Err(null("w_out"));
    }
    if len != src.len() {
        return Err((
            PriuStatus::BufferSize,
            format!("output buffer holds {len} values, parameters have {}", src.len()),
        ));
    }
    unsafe { std::slice::from_raw_parts_mut(out, len) }.copy_from_slice(src);
    Ok(())
}

/// Copies the trained parameters into `w_out` (exactly `len` values).
///
/// # Safety
/// `engine` live, `w_out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn priu_engine_trained(engine: *const PriuEngine, w_out: *mut f64, len: usize) -> PriuStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        write_out(e.0.trained(), w_out, len)
    })
}

/// Removes the rows in `removed` (duplicates ignored) and writes the
/// updated parameters. `update_ms` may be null.
///
/// # Safety
/// `engine` live, `removed` readable for `count` values (or null when
/// `count` is 0), `w_out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn priu_engine_update(
    engine: *const PriuEngine,
    method: PriuMethod,
    removed: *const u32,
    count: usize,
    w_out: *mut f64,
    len: usize,
    update_ms: *mut f64,
) -> PriuStatus {
    guard(|| {
        let e = &engine.as_ref().ok_or_else(|| null("engine"))?.0;
        let ids: &[u32] = match (removed.is_null(), count) {
            (_, 0) => &[],
            (true, _) => return Err(null("removed")),
            (false, c) => std::slice::from_raw_parts(removed, c),
        };
        let request = DeletionRequest::new(ids.iter().copied(), e.ds.n(), "ffi").map_err(fail)?;
        let method = match method {
            PriuMethod::Priu => Method::Priu,
            PriuMethod::PriuOpt => Method::PriuOpt,
            PriuMethod::Basel => Method::Basel,
            PriuMethod::ClosedForm => Method::ClosedForm,
            PriuMethod::Infl => Method::Infl,
        };
        let (w, report) = e.run(method, &request).map_err(fail)?;
        write_out(&w.w, w_out, len)?;
        if let Some(ms) = update_ms.as_mut() {
            *ms = report.update_ms;
        }
        Ok(())
    })
}

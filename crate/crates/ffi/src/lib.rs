//! C ABI over `povdyn`.
//!
//! Every fallible call returns a [`PovdynStatus`]; on failure the message is
//! kept per thread and read back with [`povdyn_last_error_message`].
//! Matrices travel as row-major `double[9]`, distributions as `double[3]`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use povdyn::asymptotic::{self, IndexKind, IndexOptions};
use povdyn::estimation::{self, EstimationOptions, EstimationReport};
use povdyn::ingestion::{self, CohortOptions};
use povdyn::markov::{self, GeneratorMatrix, TransitionMatrix};
use povdyn::model::ModelParams;
use povdyn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PovdynStatus {
    Ok = 0,
    InvalidMatrix = 1,
    NonDiagonalizable = 2,
    NotEmbeddable = 3,
    NotIrreducible = 4,
    InvalidDistribution = 5,
    InvalidThresholds = 6,
    InvalidMoments = 7,
    UnsupportedOrder = 8,
    NegativeVariance = 9,
    NoPoorMass = 10,
    ZeroPoorIncome = 11,
    NegativeIncome = 12,
    NoPoor = 13,
    EmptyCrossSection = 14,
    ZeroIncomeMass = 15,
    IncompletePath = 16,
    EmptyRow = 17,
    InsufficientClassData = 18,
    MissingThreshold = 19,
    EmptyCohort = 20,
    ParseError = 21,
    InvalidParameter = 22,
    Io = 23,
    Json = 24,
    NullPointer = 100,
    InvalidUtf8 = 101,
    /// The index is undefined at this `t` (no poor mass).
    Undefined = 102,
    Panic = 255,
}

impl From<&Error> for PovdynStatus {
    fn from(e: &Error) -> Self {
        use PovdynStatus as S;
        match e {
            Error::InvalidMatrix(_) => S::InvalidMatrix,
            Error::NonDiagonalizable { .. } => S::NonDiagonalizable,
            Error::NotEmbeddable(_) => S::NotEmbeddable,
            Error::NotIrreducible => S::NotIrreducible,
            Error::InvalidDistribution(_) => S::InvalidDistribution,
            Error::InvalidThresholds(_) => S::InvalidThresholds,
            Error::InvalidMoments(_) => S::InvalidMoments,
            Error::UnsupportedOrder(_) => S::UnsupportedOrder,
            Error::NegativeVariance { .. } => S::NegativeVariance,
            Error::NoPoorMass { .. } => S::NoPoorMass,
            Error::ZeroPoorIncome { .. } => S::ZeroPoorIncome,
            Error::NegativeIncome(_) => S::NegativeIncome,
            Error::NoPoor => S::NoPoor,
            Error::EmptyCrossSection => S::EmptyCrossSection,
            Error::ZeroIncomeMass => S::ZeroIncomeMass,
            Error::IncompletePath { .. } => S::IncompletePath,
            Error::EmptyRow { .. } => S::EmptyRow,
            Error::InsufficientClassData { .. } => S::InsufficientClassData,
            Error::MissingThreshold { .. } | Error::MissingThresholdFile { .. } => S::MissingThreshold,
            Error::EmptyCohort => S::EmptyCohort,
            Error::Parse(_) => S::ParseError,
            Error::InvalidParameter(_) => S::InvalidParameter,
            Error::Io(_) => S::Io,
            Error::Json(_) => S::Json,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PovdynIndexKind {
    H = 0,
    I = 1,
    G = 2,
    S = 3,
}

impl From<PovdynIndexKind> for IndexKind {
    fn from(k: PovdynIndexKind) -> Self {
        match k {
            PovdynIndexKind::H => IndexKind::H,
            PovdynIndexKind::I => IndexKind::I,
            PovdynIndexKind::G => IndexKind::G,
            PovdynIndexKind::S => IndexKind::S,
        }
    }
}

/// One index at one time, with its asymptotic band.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PovdynIndexPoint {
    pub t: f64,
    pub value: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Opaque fitted or user-specified model.
pub struct PovdynModel {
    params: ModelParams,
    opts: IndexOptions,
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

enum Fail {
    Core(Error),
    Status(PovdynStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

type FfiResult<T> = std::result::Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> PovdynStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PovdynStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            PovdynStatus::from(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside povdyn".into());
            PovdynStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(PovdynStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Status(PovdynStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn mat_arg(p: *const f64, what: &str) -> FfiResult<[[f64; 3]; 3]> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = std::slice::from_raw_parts(p, 9);
    Ok([[s[0], s[1], s[2]], [s[3], s[4], s[5]], [s[6], s[7], s[8]]])
}

unsafe fn write_mat(out: *mut f64, rows: [[f64; 3]; 3]) {
    let s = std::slice::from_raw_parts_mut(out, 9);
    for (k, v) in rows.iter().flatten().enumerate() {
        s[k] = *v;
    }
}

fn json_err(e: serde_json::Error) -> Fail {
    Fail::Core(Error::Json(e))
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library; valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn povdyn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a model from JSON: either bare model parameters or a full
/// estimation report (as written by `povdyn estimate`).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn povdyn_model_from_json(json: *const c_char, out: *mut *mut PovdynModel) -> PovdynStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(json, "json")?;
        let value: serde_json::Value = serde_json::from_str(text).map_err(json_err)?;
        let params: ModelParams = if value.get("params").is_some() {
            serde_json::from_value::<EstimationReport>(value).map_err(json_err)?.params
        } else {
            serde_json::from_value(value).map_err(json_err)?
        };
        params.validate()?;
        *out = Box::into_raw(Box::new(PovdynModel {
            params,
            opts: IndexOptions::default(),
        }));
        Ok(())
    })
}

/// Replaces the index options of a model (JSON object; absent keys keep
/// their defaults).
///
/// # Safety
/// `model` must come from [`povdyn_model_from_json`]; `json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn povdyn_model_set_options(model: *mut PovdynModel, json: *const c_char) -> PovdynStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        m.opts = serde_json::from_str(str_arg(json, "json")?).map_err(json_err)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`povdyn_model_from_json`] and not be used after.
#[no_mangle]
pub unsafe extern "C" fn povdyn_model_free(model: *mut PovdynModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Limit value, asymptotic variance and `1 − alpha` band for `n` agents.
/// Returns `Undefined` for I and G when the model has no poor mass at `t`.
///
/// # Safety
/// `model` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn povdyn_index_point(
    model: *const PovdynModel,
    kind: PovdynIndexKind,
    t: f64,
    n: f64,
    alpha: f64,
    out: *mut PovdynIndexPoint,
) -> PovdynStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!("t must be non-negative, got {t}")).into());
        }
        let v = asymptotic::evaluate(&m.params, t, &m.opts)?;
        let (value, variance) = match IndexKind::from(kind) {
            IndexKind::H => (Some(v.h), Some(v.var_h)),
            IndexKind::I => (v.i, v.var_i),
            IndexKind::G => (v.g, v.var_g),
            IndexKind::S => (Some(v.s), Some(v.var_s)),
        };
        let (Some(value), Some(variance)) = (value, variance) else {
            return Err(Fail::Status(
                PovdynStatus::Undefined,
                format!("index {kind:?} undefined at t = {t}: no poor mass"),
            ));
        };
        let (ci_low, ci_high) = asymptotic::confidence_band(value, variance, n, alpha)?;
        *out = PovdynIndexPoint {
            t,
            value,
            variance,
            ci_low,
            ci_high,
        };
        Ok(())
    })
}

/// `exp(t·Λ)`.
///
/// # Safety
/// `generator` points to 9 readable doubles, `out` to 9 writable ones.
#[no_mangle]
pub unsafe extern "C" fn povdyn_matrix_exp(generator: *const f64, t: f64, out: *mut f64) -> PovdynStatus {
    guard(|| {
        let lambda = GeneratorMatrix::from_rows(mat_arg(generator, "generator")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        write_mat(out, markov::matrix_exp(&lambda, t)?.rows());
        Ok(())
    })
}

/// `log(P)/eta`.
///
/// # Safety
/// `transition` points to 9 readable doubles, `out` to 9 writable ones.
#[no_mangle]
pub unsafe extern "C" fn povdyn_matrix_log_generator(transition: *const f64, eta: f64, out: *mut f64) -> PovdynStatus {
    guard(|| {
        let p = TransitionMatrix::from_rows(mat_arg(transition, "transition")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        write_mat(out, markov::matrix_log_generator(&p, eta)?.rows());
        Ok(())
    })
}

/// # Safety
/// `generator` points to 9 readable doubles, `out` to 3 writable ones.
#[no_mangle]
pub unsafe extern "C" fn povdyn_stationary_distribution(generator: *const f64, out: *mut f64) -> PovdynStatus {
    guard(|| {
        let lambda = GeneratorMatrix::from_rows(mat_arg(generator, "generator")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let w = markov::stationary_distribution(&lambda)?.weights();
        std::slice::from_raw_parts_mut(out, 3).copy_from_slice(&w);
        Ok(())
    })
}

/// # Safety
/// `low` and `high` must be writable.
#[no_mangle]
pub unsafe extern "C" fn povdyn_confidence_band(
    value: f64,
    variance: f64,
    n: f64,
    alpha: f64,
    low: *mut f64,
    high: *mut f64,
) -> PovdynStatus {
    guard(|| {
        if low.is_null() || high.is_null() {
            return Err(null("low/high"));
        }
        let (a, b) = asymptotic::confidence_band(value, variance, n, alpha)?;
        *low = a;
        *high = b;
        Ok(())
    })
}

/// Normal-approximation probability that the empirical index of `n` agents
/// lies in `[a, b]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn povdyn_prob_in_interval(
    a: f64,
    b: f64,
    value: f64,
    variance: f64,
    n: f64,
    out: *mut f64,
) -> PovdynStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = asymptotic::prob_in_interval(a, b, value, variance, n)?;
        Ok(())
    })
}

/// Runs the file pipeline (panel CSV + threshold CSV) and returns the
/// estimation report as JSON. `options_json` may be null; it accepts the
/// cohort keys (`waves`, `base_year`, `base_components`, `extreme_fraction`,
/// `standardize`) and the estimation keys (`eta`, `window`,
/// `pair_denominator`) in one object. Free the result with
/// [`povdyn_string_free`].
///
/// # Safety
/// Path arguments must be NUL-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn povdyn_estimate_csv(
    panel_path: *const c_char,
    thresholds_path: *const c_char,
    options_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PovdynStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let panel = str_arg(panel_path, "panel_path")?;
        let thresholds = str_arg(thresholds_path, "thresholds_path")?;
        let (cohort_opts, est_opts) = if options_json.is_null() {
            (CohortOptions::default(), EstimationOptions::default())
        } else {
            let v: serde_json::Value = serde_json::from_str(str_arg(options_json, "options_json")?).map_err(json_err)?;
            (
                serde_json::from_value::<CohortOptions>(v.clone()).map_err(json_err)?,
                serde_json::from_value::<EstimationOptions>(v).map_err(json_err)?,
            )
        };
        let (cohort, _skipped) = ingestion::load_cohort(panel, thresholds, &cohort_opts)?;
        let report = estimation::estimate(&cohort, &est_opts)?;
        let text = serde_json::to_string(&report).map_err(json_err)?;
        *out_json = CString::new(text).map_err(|e| Fail::Status(PovdynStatus::InvalidUtf8, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library (or be null).
#[no_mangle]
pub unsafe extern "C" fn povdyn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

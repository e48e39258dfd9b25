//! C ABI over `tla-core`: load a checkpoint, classify text with the
//! rejection rule, evaluate on a labelled CSV, and a few pure helpers.
//!
//! Every function returns a [`TlaStatus`]. On failure the message is
//! available from [`tla_last_error`] on the same thread. Panics never cross
//! the boundary; they are reported as [`TlaStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tla_core::checkpoint::Checkpoint;
use tla_core::metrics::{aggregate, confusion, Averaging};
use tla_core::run::{encode_split, features_and_probs, NUM_CLASSES};
use tla_core::tensor::{scalar_recurrence, Regime, ScalarRecurrence};
use tla_core::text::{encode_text, load_trac2};
use tla_core::wisdomnet::{classify_probs, validate_threshold, Classification};
use tla_core::TlaError;

/// Bumped on any incompatible change to this interface.
pub const TLA_ABI_VERSION: u32 = 1;

/// Class index reported for a rejected input.
pub const TLA_REJECTED: i32 = -1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Incompatible = 5,
    Numeric = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlaRegime {
    Explodes = 0,
    Vanishes = 1,
    Neutral = 2,
}

/// A loaded checkpoint. Create with [`tla_model_load`], release with
/// [`tla_model_free`]. Safe to share across threads for reading.
pub struct TlaModel {
    checkpoint: Checkpoint,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TlaModelInfo {
    pub num_classes: u32,
    pub max_len: u32,
    pub vocab_size: u32,
    /// Threshold stored with the head, or the default when there is none.
    pub threshold: f64,
    /// Nonzero when a trained rejection head is attached.
    pub has_head: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TlaEvalSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub coverage: f64,
    pub rejected: u64,
    pub total: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(TlaStatus, String);

impl From<TlaError> for Failure {
    fn from(e: TlaError) -> Self {
        let status = match &e {
            TlaError::Io { .. } => TlaStatus::Io,
            TlaError::Format(_) | TlaError::Parse { .. } | TlaError::Json(_) => TlaStatus::Format,
            TlaError::Incompatible(_) => TlaStatus::Incompatible,
            TlaError::Numeric { .. } => TlaStatus::Numeric,
            TlaError::Config(_) | TlaError::Domain(_) | TlaError::Dimension(_) | TlaError::Validation(_) => {
                TlaStatus::InvalidArgument
            }
            _ => TlaStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: TlaStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status and last-error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TlaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TlaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            TlaStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(TlaStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TlaStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// # Safety
/// `p` must be null or point to a live `TlaModel`.
unsafe fn model<'a>(p: *const TlaModel) -> Result<&'a TlaModel, Failure> {
    p.as_ref().ok_or_else(|| fail(TlaStatus::NullPointer, "model is null"))
}

fn check_theta(theta: f64) -> Result<(), Failure> {
    validate_threshold(theta).map_err(|_| fail(TlaStatus::InvalidArgument, format!("theta must lie in [0, 1], got {theta}")))
}

#[no_mangle]
pub extern "C" fn tla_abi_version() -> u32 {
    TLA_ABI_VERSION
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tla_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tla_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tla_model_load(path: *const c_char, out: *mut *mut TlaModel) -> TlaStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(TlaStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let checkpoint = Checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(TlaModel { checkpoint }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or come from `tla_model_load` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn tla_model_free(model: *mut TlaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `m` must be a live model and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tla_model_info(m: *const TlaModel, out: *mut TlaModelInfo) -> TlaStatus {
    guard(|| {
        let m = model(m)?;
        let out = out.as_mut().ok_or_else(|| fail(TlaStatus::NullPointer, "out is null"))?;
        let ck = &m.checkpoint;
        *out = TlaModelInfo {
            num_classes: NUM_CLASSES as u32,
            max_len: ck.max_len as u32,
            vocab_size: ck.vocab.len() as u32,
            threshold: ck.head.as_ref().map_or(tla_core::wisdomnet::DEFAULT_THRESHOLD, |h| h.threshold),
            has_head: ck.head.is_some() as u8,
        };
        Ok(())
    })
}

/// Classifies one text. `out_class` receives the class index or
/// `TLA_REJECTED`. When `out_probs` is non-null it receives the class
/// distribution and must hold at least `probs_len ≥ num_classes` values.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out_class` a valid pointer;
/// `out_probs` null or valid for `probs_len` writes.
#[no_mangle]
pub unsafe extern "C" fn tla_model_predict(
    m: *const TlaModel,
    text: *const c_char,
    theta: f64,
    out_class: *mut i32,
    out_probs: *mut f64,
    probs_len: usize,
) -> TlaStatus {
    guard(|| {
        let m = model(m)?;
        let text = c_str(text, "text")?;
        let out_class = out_class.as_mut().ok_or_else(|| fail(TlaStatus::NullPointer, "out_class is null"))?;
        check_theta(theta)?;
        if !out_probs.is_null() && probs_len < NUM_CLASSES {
            return Err(fail(
                TlaStatus::BufferTooSmall,
                format!("probs_len {probs_len} < {NUM_CLASSES}"),
            ));
        }
        let ck = &m.checkpoint;
        let ids = encode_text(&ck.vocab, text, ck.max_len)?;
        let (_, probs) = features_and_probs(ck, &[ids])?;
        let p = &probs[0];
        *out_class = match classify_probs(p, theta) {
            Classification::Class(c) => c as i32,
            Classification::Rejected => TLA_REJECTED,
        };
        if !out_probs.is_null() {
            std::slice::from_raw_parts_mut(out_probs, NUM_CLASSES).copy_from_slice(p);
        }
        Ok(())
    })
}

/// Support-weighted metrics on a labelled CSV in the checkpoint's language.
///
/// # Safety
/// `csv_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tla_model_evaluate(
    m: *const TlaModel,
    csv_path: *const c_char,
    theta: f64,
    out: *mut TlaEvalSummary,
) -> TlaStatus {
    guard(|| {
        let m = model(m)?;
        let path = c_str(csv_path, "csv_path")?;
        let out = out.as_mut().ok_or_else(|| fail(TlaStatus::NullPointer, "out is null"))?;
        check_theta(theta)?;
        let ck = &m.checkpoint;
        let split = load_trac2(Path::new(path), ck.language)?;
        let (ids, labels) = encode_split(&ck.vocab, &split, ck.max_len)?;
        let (_, probs) = features_and_probs(ck, &ids)?;
        let preds: Vec<Classification> = probs.iter().map(|p| classify_probs(p, theta)).collect();
        let r = aggregate(&confusion(&preds, &labels, NUM_CLASSES)?, Averaging::Weighted);
        *out = TlaEvalSummary {
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            coverage: r.coverage,
            rejected: r.rejected as u64,
            total: r.total as u64,
        };
        Ok(())
    })
}

/// Applies the threshold rule to a probability vector: the argmax class if
/// its probability is at least `theta`, otherwise `TLA_REJECTED`.
///
/// # Safety
/// `probs` must be valid for `len` reads and `out_class` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tla_classify_probs(probs: *const f64, len: usize, theta: f64, out_class: *mut i32) -> TlaStatus {
    guard(|| {
        if probs.is_null() {
            return Err(fail(TlaStatus::NullPointer, "probs is null"));
        }
        let out_class = out_class.as_mut().ok_or_else(|| fail(TlaStatus::NullPointer, "out_class is null"))?;
        if len == 0 {
            return Err(fail(TlaStatus::InvalidArgument, "probs is empty"));
        }
        check_theta(theta)?;
        let p = std::slice::from_raw_parts(probs, len);
        *out_class = match classify_probs(p, theta) {
            Classification::Class(c) => c as i32,
            Classification::Rejected => TLA_REJECTED,
        };
        Ok(())
    })
}

/// `W^n·x0` and the regime of the scalar recurrence.
///
/// # Safety
/// `out_value` and `out_regime` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tla_scalar_recurrence(
    w: f64,
    x0: f64,
    n: u32,
    out_value: *mut f64,
    out_regime: *mut TlaRegime,
) -> TlaStatus {
    guard(|| {
        let value = out_value.as_mut().ok_or_else(|| fail(TlaStatus::NullPointer, "out_value is null"))?;
        let regime = out_regime.as_mut().ok_or_else(|| fail(TlaStatus::NullPointer, "out_regime is null"))?;
        let r = ScalarRecurrence::new(w, x0, n);
        *value = scalar_recurrence(&r);
        *regime = match r.regime() {
            Regime::Explodes => TlaRegime::Explodes,
            Regime::Vanishes => TlaRegime::Vanishes,
            Regime::Neutral => TlaRegime::Neutral,
        };
        Ok(())
    })
}

//! C ABI over `stsreg`.
//!
//! Every fallible call returns a [`StsregStatus`]; on failure the message is
//! available from [`stsreg_last_error`] on the same thread until the next
//! failing call. Handles are opaque and must be released with their `_free`
//! function. Panics never cross the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stsreg::checkpoint::Checkpoint;
use stsreg::encoder::Model;
use stsreg::eval;
use stsreg::labelmap::LabelMapping;
use stsreg::losses::{self, LossSpec};
use stsreg::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StsregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    UndefinedCorrelation = 5,
    Panic = 6,
}

/// A trained model loaded from a checkpoint.
pub struct StsregModel {
    model: Model,
    mapping: Option<LabelMapping>,
}

/// Ordered categories on equally spaced nodes.
pub struct StsregMapping {
    mapping: LabelMapping,
    names: Vec<CString>,
}

impl StsregMapping {
    fn new(mapping: LabelMapping) -> Result<Self, Failure> {
        let names = mapping
            .categories()
            .iter()
            .map(|c| CString::new(c.as_str()))
            .collect::<Result<_, _>>()
            .map_err(|_| Failure::invalid("category contains a NUL byte"))?;
        Ok(StsregMapping { mapping, names })
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: StsregStatus,
    message: String,
}

impl Failure {
    fn null(what: &str) -> Self {
        Failure {
            status: StsregStatus::NullPointer,
            message: format!("{what} is null"),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            status: StsregStatus::InvalidArgument,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => StsregStatus::Io,
            Error::Checkpoint(_) | Error::Json(_) => StsregStatus::Checkpoint,
            Error::UndefinedCorrelation(_) => StsregStatus::UndefinedCorrelation,
            _ => StsregStatus::InvalidArgument,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StsregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StsregStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("internal panic");
            StsregStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn stsreg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stsreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint file. On success `*out_model` owns a new model handle.
/// Pointers: `path` NUL-terminated, `out_model` valid.
#[no_mangle]
pub unsafe extern "C" fn stsreg_model_load(path: *const c_char, out_model: *mut *mut StsregModel) -> StsregStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = ptr::null_mut();
        let ckpt = Checkpoint::load(text(path, "path")?)?;
        let mapping = ckpt.labels.mapping().cloned();
        *slot = Box::into_raw(Box::new(StsregModel {
            model: ckpt.model,
            mapping,
        }));
        Ok(())
    })
}

/// Pointers: `model` must come from [`stsreg_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stsreg_model_free(model: *mut StsregModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Similarity score for a sentence pair.
/// Pointers: `model` must be a live handle, `s1`/`s2` NUL-terminated, `out_score` valid.
#[no_mangle]
pub unsafe extern "C" fn stsreg_model_score(
    model: *const StsregModel,
    s1: *const c_char,
    s2: *const c_char,
    out_score: *mut f64,
) -> StsregStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| Failure::null("model"))?;
        let dst = out(out_score, "out_score")?;
        *dst = m.model.score(text(s1, "s1")?, text(s2, "s2")?)?;
        Ok(())
    })
}

/// Copy of the model's category mapping. Fails with `INVALID_ARGUMENT` for
/// models trained on graded scores.
/// Pointers: `model` must be a live handle and `out_mapping` valid.
#[no_mangle]
pub unsafe extern "C" fn stsreg_model_mapping(
    model: *const StsregModel,
    out_mapping: *mut *mut StsregMapping,
) -> StsregStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| Failure::null("model"))?;
        let slot = out(out_mapping, "out_mapping")?;
        *slot = ptr::null_mut();
        let mapping = m
            .mapping
            .clone()
            .ok_or_else(|| Failure::invalid("model was trained on graded scores"))?;
        *slot = Box::into_raw(Box::new(StsregMapping::new(mapping)?));
        Ok(())
    })
}

/// Build a mapping placing `categories[i]` at `start + i * interval`.
/// Pointers: `categories` must point to `count` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn stsreg_mapping_new(
    categories: *const *const c_char,
    count: usize,
    start: f64,
    interval: f64,
    out_mapping: *mut *mut StsregMapping,
) -> StsregStatus {
    guard(|| {
        let slot = out(out_mapping, "out_mapping")?;
        *slot = ptr::null_mut();
        if categories.is_null() && count > 0 {
            return Err(Failure::null("categories"));
        }
        let names = (0..count)
            .map(|i| text(*categories.add(i), "category").map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        let mapping = LabelMapping::build(&names, start, interval)?;
        *slot = Box::into_raw(Box::new(StsregMapping::new(mapping)?));
        Ok(())
    })
}

/// Pointers: `mapping` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stsreg_mapping_free(mapping: *mut StsregMapping) {
    if !mapping.is_null() {
        drop(Box::from_raw(mapping));
    }
}

/// Pointers: `mapping` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stsreg_mapping_len(mapping: *const StsregMapping) -> usize {
    mapping.as_ref().map_or(0, |m| m.mapping.len())
}

/// Name of category `index`, borrowed from the handle; NULL when out of range.
/// Pointers: `mapping` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stsreg_mapping_category(mapping: *const StsregMapping, index: usize) -> *const c_char {
    mapping
        .as_ref()
        .and_then(|m| m.names.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Index of the node nearest to `prediction` (ties go to the higher node).
/// Pointers: `mapping` must be a live handle and `out_index` valid.
#[no_mangle]
pub unsafe extern "C" fn stsreg_mapping_classify(
    mapping: *const StsregMapping,
    prediction: f64,
    out_index: *mut usize,
) -> StsregStatus {
    guard(|| {
        let m = mapping.as_ref().ok_or_else(|| Failure::null("mapping"))?;
        let dst = out(out_index, "out_index")?;
        if !prediction.is_finite() {
            return Err(Failure::invalid("prediction is not finite"));
        }
        *dst = m.mapping.nearest_index(prediction);
        Ok(())
    })
}

unsafe fn eval_loss(
    spec: Result<LossSpec, Error>,
    prediction: f64,
    label: f64,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> StsregStatus {
    guard(|| {
        let spec = spec?;
        let value = out(out_value, "out_value")?;
        let (v, g) = losses::regression_loss(&spec, prediction, label, None)?;
        *value = v;
        if let Some(grad) = out_grad.as_mut() {
            *grad = g;
        }
        Ok(())
    })
}

/// Translated ReLU loss of one prediction and its derivative with respect to
/// the prediction. `out_grad` may be NULL.
/// Pointers: `out_value` must be valid; `out_grad` valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn stsreg_translated_relu(
    prediction: f64,
    label: f64,
    k: f64,
    x0: f64,
    d: f64,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> StsregStatus {
    eval_loss(
        LossSpec::translated_relu(k, x0, d),
        prediction,
        label,
        out_value,
        out_grad,
    )
}

/// Smooth K2 loss; same conventions as [`stsreg_translated_relu`].
/// Pointers: `out_value` must be valid; `out_grad` valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn stsreg_smooth_k2(
    prediction: f64,
    label: f64,
    k: f64,
    x0: f64,
    d: f64,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> StsregStatus {
    eval_loss(LossSpec::smooth_k2(k, x0, d), prediction, label, out_value, out_grad)
}

/// Spearman rank correlation of two length-`n` arrays.
/// Pointers: `predictions` and `golds` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn stsreg_spearman(
    predictions: *const f64,
    golds: *const f64,
    n: usize,
    out_rho: *mut f64,
) -> StsregStatus {
    guard(|| {
        let dst = out(out_rho, "out_rho")?;
        let p = slice(predictions, n, "predictions")?;
        let g = slice(golds, n, "golds")?;
        *dst = eval::spearman(p, g)?;
        Ok(())
    })
}

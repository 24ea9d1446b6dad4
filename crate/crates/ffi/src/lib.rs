//! C ABI over trained `kancd` checkpoints.
//!
//! Every fallible call returns a [`KancdStatus`]. On failure the message is
//! kept per thread and can be read with [`kancd_last_error`]. Models are
//! opaque: load one with [`kancd_model_load`] or [`kancd_model_from_bytes`]
//! and release it with [`kancd_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kancd::cdm::DiagnosisModel;
use kancd::checkpoint::{self, CheckpointMeta};
use kancd::Error;

/// Result of a C API call.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KancdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Shape = 10,
    Domain = 11,
    Contract = 12,
    Config = 13,
    UnknownVariant = 14,
    Lookup = 15,
    Parse = 16,
    Integrity = 17,
    Io = 18,
    UndefinedMetric = 19,
    NonFinite = 20,
    Capability = 21,
    Checkpoint = 22,
    Panic = 99,
}

impl From<&Error> for KancdStatus {
    fn from(e: &Error) -> Self {
        match e.code() {
            "shape" => KancdStatus::Shape,
            "domain" => KancdStatus::Domain,
            "contract" => KancdStatus::Contract,
            "config" => KancdStatus::Config,
            "variant" => KancdStatus::UnknownVariant,
            "lookup" => KancdStatus::Lookup,
            "parse" => KancdStatus::Parse,
            "integrity" => KancdStatus::Integrity,
            "io" => KancdStatus::Io,
            "metric" => KancdStatus::UndefinedMetric,
            "nonfinite" => KancdStatus::NonFinite,
            "capability" => KancdStatus::Capability,
            _ => KancdStatus::Checkpoint,
        }
    }
}

/// A loaded model together with its id maps.
pub struct KancdModel {
    model: DiagnosisModel,
    meta: CheckpointMeta,
    variant: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn fail(status: KancdStatus, msg: impl Into<String>) -> KancdStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), KancdStatus>) -> KancdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KancdStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(KancdStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn lift<T>(r: kancd::Result<T>) -> Result<T, KancdStatus> {
    r.map_err(|e| fail(KancdStatus::from(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), KancdStatus> {
    if p.is_null() {
        Err(fail(KancdStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], KancdStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed(model: DiagnosisModel, meta: CheckpointMeta) -> *mut KancdModel {
    let variant = CString::new(model.variant().to_string()).unwrap_or_default();
    Box::into_raw(Box::new(KancdModel {
        model,
        meta,
        variant,
    }))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kancd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kancd_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn kancd_model_load(
    path: *const c_char,
    out: *mut *mut KancdModel,
) -> KancdStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(KancdStatus::InvalidUtf8, "path is not valid UTF-8"))?;
        let (model, meta) = lift(checkpoint::load(Path::new(path)))?;
        *out = boxed(model, meta);
        Ok(())
    })
}

/// Decodes a checkpoint held in memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kancd_model_from_bytes(
    bytes: *const u8,
    len: usize,
    out: *mut *mut KancdModel,
) -> KancdStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let data = slice(bytes, len, "bytes")?;
        let (model, meta) = lift(checkpoint::from_bytes(data))?;
        *out = boxed(model, meta);
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kancd_model_free(model: *mut KancdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the number of students, exercises and concepts. Any output
/// pointer may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn kancd_model_dims(
    model: *const KancdModel,
    n_students: *mut usize,
    n_exercises: *mut usize,
    n_concepts: *mut usize,
) -> KancdStatus {
    guard(|| {
        non_null(model, "model")?;
        let c = (*model).model.config();
        for (p, v) in [(n_students, c.n), (n_exercises, c.m), (n_concepts, c.k)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Variant name, owned by the model handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn kancd_model_variant(model: *const KancdModel) -> *const c_char {
    if model.is_null() {
        return ptr::null();
    }
    (*model).variant.as_ptr()
}

/// Epochs the model was trained for.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn kancd_model_trained_epochs(model: *const KancdModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).model.trained_epochs()
}

/// Dense index of a student id from the training data, or
/// `KANCD_STATUS_LOOKUP` when the id is unknown.
///
/// # Safety
/// `model` must be a live handle, `id` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kancd_model_student_index(
    model: *const KancdModel,
    id: *const c_char,
    out: *mut usize,
) -> KancdStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(id, "id")?;
        non_null(out, "out")?;
        let id = CStr::from_ptr(id)
            .to_str()
            .map_err(|_| fail(KancdStatus::InvalidUtf8, "id is not valid UTF-8"))?;
        let pos = (*model).meta.student_ids.iter().position(|s| s == id);
        *out =
            pos.ok_or_else(|| fail(KancdStatus::Lookup, format!("unknown student id '{id}'")))?;
        Ok(())
    })
}

/// Probabilities of a correct response for `len` (student, exercise)
/// pairs given as dense indices.
///
/// # Safety
/// `students`, `exercises` and `out` must each hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn kancd_model_predict(
    model: *const KancdModel,
    students: *const usize,
    exercises: *const usize,
    len: usize,
    out: *mut f64,
) -> KancdStatus {
    guard(|| {
        non_null(model, "model")?;
        let s = slice(students, len, "students")?;
        let e = slice(exercises, len, "exercises")?;
        if len == 0 {
            return Ok(());
        }
        non_null(out, "out")?;
        let p = lift((*model).model.predict(s, e))?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&p);
        Ok(())
    })
}

/// Per-concept proficiency of one student. `exercises` lists the exercises
/// the student answered and may be empty. `out` receives `capacity` values
/// at most; the concept count is required.
///
/// # Safety
/// `exercises` must hold `n_exercises` values and `out` `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn kancd_model_mastery(
    model: *const KancdModel,
    student: usize,
    exercises: *const usize,
    n_exercises: usize,
    out: *mut f64,
    capacity: usize,
) -> KancdStatus {
    guard(|| {
        non_null(model, "model")?;
        let ex = slice(exercises, n_exercises, "exercises")?;
        let k = (*model).model.config().k;
        if capacity < k {
            return Err(fail(
                KancdStatus::BufferTooSmall,
                format!("mastery needs {k} values, buffer holds {capacity}"),
            ));
        }
        non_null(out, "out")?;
        let v = lift((*model).model.mastery(student, ex))?;
        std::slice::from_raw_parts_mut(out, k).copy_from_slice(&v.values);
        Ok(())
    })
}

//! C ABI over the `convkb` library.
//!
//! Datasets and trained models are exposed as opaque handles that the caller
//! frees with the matching `_free` function. Every fallible call returns a
//! [`ConvkbStatus`]; on failure [`convkb_last_error`] describes what went wrong
//! on the calling thread. Panics are caught at the boundary and reported as
//! [`ConvkbStatus::Panic`].
//!
//! The C header `include/convkb.h` is generated from this file at build time.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use convkb::eval::{evaluate_split, EvalConfig, Setting};
use convkb::{load_dir, Checkpoint, Error, KnowledgeBase, Model, Scorer, Side, Split, Triple};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvkbStatus {
    Ok = 0,
    /// Null pointer, bad argument, or invalid configuration.
    Usage = 1,
    /// Missing or malformed files, vocabulary mismatch.
    Data = 2,
    /// Non-finite values.
    Numerical = 3,
    /// A Rust panic was caught.
    Panic = 4,
}

/// A loaded dataset (train, valid and test splits).
pub struct ConvkbKb {
    kb: KnowledgeBase,
}

/// A model restored from a checkpoint.
pub struct ConvkbModel {
    checkpoint: Checkpoint,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConvkbKbCounts {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Ranking metrics; hits are fractions in [0, 1].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConvkbReport {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> ConvkbStatus {
    match err.exit_code() {
        1 => ConvkbStatus::Usage,
        3 => ConvkbStatus::Numerical,
        _ => ConvkbStatus::Data,
    }
}

/// Runs `f`, recording its error message and catching panics.
fn guard(f: impl FnOnce() -> Result<(), (ConvkbStatus, String)>) -> ConvkbStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ConvkbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_owned());
            set_last_error(format!("panic: {msg}"));
            ConvkbStatus::Panic
        }
    }
}

fn lib_err(err: Error) -> (ConvkbStatus, String) {
    (status_of(&err), err.to_string())
}

fn usage(msg: impl Into<String>) -> (ConvkbStatus, String) {
    (ConvkbStatus::Usage, msg.into())
}

/// # Safety
/// `s` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, name: &str) -> Result<&'a str, (ConvkbStatus, String)> {
    if s.is_null() {
        return Err(usage(format!("{name} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| usage(format!("{name} is not valid UTF-8")))
}

/// # Safety
/// `p` is null or points to a live `T`.
unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, (ConvkbStatus, String)> {
    p.as_ref().ok_or_else(|| usage(format!("{name} is null")))
}

/// Message for the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn convkb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn convkb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
///
/// # Safety
/// `dir` is a NUL-terminated path; `out` is a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn convkb_kb_load(dir: *const c_char, out: *mut *mut ConvkbKb) -> ConvkbStatus {
    guard(|| {
        if out.is_null() {
            return Err(usage("out is null"));
        }
        *out = ptr::null_mut();
        let dir = str_arg(dir, "dir")?;
        let kb = load_dir(dir).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ConvkbKb { kb }));
        Ok(())
    })
}

/// # Safety
/// `kb` is null or a handle from [`convkb_kb_load`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn convkb_kb_free(kb: *mut ConvkbKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// # Safety
/// `kb` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convkb_kb_counts(kb: *const ConvkbKb, out: *mut ConvkbKbCounts) -> ConvkbStatus {
    guard(|| {
        let kb = &ref_arg(kb, "kb")?.kb;
        if out.is_null() {
            return Err(usage("out is null"));
        }
        *out = ConvkbKbCounts {
            entities: kb.num_entities(),
            relations: kb.num_relations(),
            train: kb.train.len(),
            valid: kb.valid.len(),
            test: kb.test.len(),
        };
        Ok(())
    })
}

/// Id of the entity labelled `label`; [`ConvkbStatus::Usage`] if unknown.
///
/// # Safety
/// `kb` is a live handle, `label` a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convkb_kb_entity_id(
    kb: *const ConvkbKb,
    label: *const c_char,
    out: *mut usize,
) -> ConvkbStatus {
    guard(|| {
        let kb = &ref_arg(kb, "kb")?.kb;
        let label = str_arg(label, "label")?;
        if out.is_null() {
            return Err(usage("out is null"));
        }
        *out = kb
            .entities
            .get(label)
            .ok_or_else(|| usage(format!("unknown entity {label:?}")))?;
        Ok(())
    })
}

/// Id of the relation labelled `label`; [`ConvkbStatus::Usage`] if unknown.
///
/// # Safety
/// `kb` is a live handle, `label` a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convkb_kb_relation_id(
    kb: *const ConvkbKb,
    label: *const c_char,
    out: *mut usize,
) -> ConvkbStatus {
    guard(|| {
        let kb = &ref_arg(kb, "kb")?.kb;
        let label = str_arg(label, "label")?;
        if out.is_null() {
            return Err(usage("out is null"));
        }
        *out = kb
            .relations
            .get(label)
            .ok_or_else(|| usage(format!("unknown relation {label:?}")))?;
        Ok(())
    })
}

/// Restores a model from a checkpoint written by `convkb train`.
///
/// # Safety
/// `path` is a NUL-terminated path; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convkb_model_load(path: *const c_char, out: *mut *mut ConvkbModel) -> ConvkbStatus {
    guard(|| {
        if out.is_null() {
            return Err(usage("out is null"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let checkpoint = Checkpoint::load(path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ConvkbModel { checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `model` is null or a handle from [`convkb_model_load`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn convkb_model_free(model: *mut ConvkbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// [`ConvkbStatus::Data`] unless the model was trained on `kb`'s vocabularies.
///
/// # Safety
/// Both handles are live.
#[no_mangle]
pub unsafe extern "C" fn convkb_model_check_vocab(model: *const ConvkbModel, kb: *const ConvkbKb) -> ConvkbStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let kb = ref_arg(kb, "kb")?;
        model.checkpoint.check_vocab(&kb.kb).map_err(lib_err)
    })
}

fn check_triple(model: &Model, t: Triple) -> Result<(), (ConvkbStatus, String)> {
    let emb = model.emb();
    if t.head >= emb.num_entities() || t.tail >= emb.num_entities() || t.relation >= emb.num_relations() {
        return Err(usage(format!("triple {t} is out of range")));
    }
    Ok(())
}

/// Score of `(head, relation, tail)`; lower means more plausible.
///
/// # Safety
/// `model` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convkb_model_score(
    model: *const ConvkbModel,
    head: usize,
    relation: usize,
    tail: usize,
    out: *mut f64,
) -> ConvkbStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.checkpoint.model;
        if out.is_null() {
            return Err(usage("out is null"));
        }
        let t = Triple::new(head, relation, tail);
        check_triple(model, t)?;
        let s = model.score(t);
        if !s.is_finite() {
            return Err((ConvkbStatus::Numerical, format!("non-finite score for {t}")));
        }
        *out = s;
        Ok(())
    })
}

/// Fills `out[e]` with the score of every substitution of one side of the
/// triple. `len` must equal the number of entities.
///
/// # Safety
/// `model` is a live handle; `out` points to `len` writable doubles.
unsafe fn score_side(model: *const ConvkbModel, t: Triple, side: Side, out: *mut f64, len: usize) -> ConvkbStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.checkpoint.model;
        if out.is_null() {
            return Err(usage("out is null"));
        }
        check_triple(model, t)?;
        let n = model.emb().num_entities();
        if len != n {
            return Err(usage(format!("buffer holds {len} scores, model has {n} entities")));
        }
        let buf = std::slice::from_raw_parts_mut(out, len);
        model.score_candidates(t, side, buf);
        Ok(())
    })
}

/// Scores `(head, relation, e)` for every entity `e`.
///
/// # Safety
/// `model` is a live handle; `out` points to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn convkb_model_score_tails(
    model: *const ConvkbModel,
    head: usize,
    relation: usize,
    out: *mut f64,
    len: usize,
) -> ConvkbStatus {
    score_side(model, Triple::new(head, relation, 0), Side::Tail, out, len)
}

/// Scores `(e, relation, tail)` for every entity `e`.
///
/// # Safety
/// `model` is a live handle; `out` points to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn convkb_model_score_heads(
    model: *const ConvkbModel,
    relation: usize,
    tail: usize,
    out: *mut f64,
    len: usize,
) -> ConvkbStatus {
    score_side(model, Triple::new(0, relation, tail), Side::Head, out, len)
}

/// Ranks the test split. `filtered` non-zero selects the filtered setting.
///
/// # Safety
/// Both handles are live; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn convkb_evaluate(
    model: *const ConvkbModel,
    kb: *const ConvkbKb,
    filtered: c_int,
    out: *mut ConvkbReport,
) -> ConvkbStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let kb = &ref_arg(kb, "kb")?.kb;
        if out.is_null() {
            return Err(usage("out is null"));
        }
        model.checkpoint.check_vocab(kb).map_err(lib_err)?;
        let setting = if filtered != 0 { Setting::Filtered } else { Setting::Raw };
        let report = evaluate_split(
            &model.checkpoint.model,
            kb,
            Split::Test,
            &EvalConfig::with_setting(setting),
        )
        .map_err(lib_err)?;
        let hits = |n| report.hits_at(n).unwrap_or(0.0);
        *out = ConvkbReport {
            mr: report.mr,
            mrr: report.mrr,
            hits1: hits(1),
            hits3: hits(3),
            hits10: hits(10),
        };
        Ok(())
    })
}

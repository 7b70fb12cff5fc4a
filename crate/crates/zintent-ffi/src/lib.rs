//! C ABI over the zero-shot classifier: load a checkpoint plus an embedding
//! database once, then classify raw feature buffers. Handles are opaque;
//! every call reports a status code and leaves a human-readable message in a
//! thread-local slot readable via `zintent_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use zintent::checkpoint::{self, Checkpoint};
use zintent::encoders::AudioBackbone;
use zintent::error::Error;
use zintent::zeroshot::{classify_zero_shot, verify_fingerprint, EmbeddingDatabase, Heads};
use zintent::Matrix;

/// A loaded model/database pair. Create with `zintent_open`, destroy with
/// `zintent_close`. Safe to share across threads for concurrent classify
/// calls; open and close must not race with use.
pub struct ZintentClassifier {
    model: Checkpoint,
    db: EmbeddingDatabase,
}

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZintentStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArg = 1,
    /// A path argument was not valid UTF-8.
    Utf8 = 2,
    /// A file could not be read.
    Io = 3,
    /// A file was read but could not be parsed.
    Format = 4,
    /// Inputs were structurally valid but the settings are unusable.
    Config = 5,
    /// The database was built by a different model pipeline.
    Fingerprint = 6,
    /// Any other failure, including numeric errors and panics.
    Runtime = 7,
}

/// One ranked intent hypothesis.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct ZintentPrediction {
    pub intent: usize,
    pub similarity: f64,
    pub sentence_id: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> ZintentStatus {
    match err {
        Error::Io(_) => ZintentStatus::Io,
        Error::Format { .. } => ZintentStatus::Format,
        Error::Config(_) | Error::Dependency(_) => ZintentStatus::Config,
        Error::StaleDb { .. } => ZintentStatus::Fingerprint,
        _ => ZintentStatus::Runtime,
    }
}

fn fail(err: &Error) -> ZintentStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn guard<F: FnOnce() -> ZintentStatus>(f: F) -> ZintentStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            ZintentStatus::Runtime
        }
    }
}

fn model_heads(model: &Checkpoint) -> (&AudioBackbone, Heads<'_>) {
    match model {
        Checkpoint::Teacher(t) => (&t.audio_backbone, Heads::of_teacher(t)),
        Checkpoint::Student(s) => (&s.backbone, Heads::of_student(s)),
    }
}

/// The message for the most recent failure on this thread; empty after a
/// success. The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn zintent_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// The crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn zintent_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a model checkpoint and an embedding database and verifies that the
/// database was built by this model's pipeline. On success writes the new
/// handle to `out`; on failure writes null.
///
/// # Safety
/// `checkpoint_path` and `db_path` must be NUL-terminated strings and `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn zintent_open(
    checkpoint_path: *const c_char,
    db_path: *const c_char,
    out: *mut *mut ZintentClassifier,
) -> ZintentStatus {
    guard(|| {
        if checkpoint_path.is_null() || db_path.is_null() || out.is_null() {
            set_error("zintent_open: null argument");
            return ZintentStatus::NullArg;
        }
        *out = ptr::null_mut();
        let ckpt_path = match CStr::from_ptr(checkpoint_path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("zintent_open: checkpoint path is not valid UTF-8");
                return ZintentStatus::Utf8;
            }
        };
        let db_path = match CStr::from_ptr(db_path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("zintent_open: database path is not valid UTF-8");
                return ZintentStatus::Utf8;
            }
        };
        let model = match checkpoint::load(ckpt_path.as_ref()) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        let db = match EmbeddingDatabase::load(db_path.as_ref()) {
            Ok(d) => d,
            Err(e) => return fail(&e),
        };
        {
            let (backbone, heads) = model_heads(&model);
            if let Err(e) = verify_fingerprint(&db, backbone, &heads) {
                return fail(&e);
            }
        }
        *out = Box::into_raw(Box::new(ZintentClassifier { model, db }));
        set_error("");
        ZintentStatus::Ok
    })
}

/// Releases a handle. Null is a no-op.
///
/// # Safety
/// `handle` must be null or a pointer from `zintent_open` not yet closed.
#[no_mangle]
pub unsafe extern "C" fn zintent_close(handle: *mut ZintentClassifier) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Features per frame the model expects; 0 if `handle` is null.
///
/// # Safety
/// `handle` must be null or a live handle from `zintent_open`.
#[no_mangle]
pub unsafe extern "C" fn zintent_feature_dim(handle: *const ZintentClassifier) -> usize {
    if handle.is_null() {
        return 0;
    }
    let (backbone, _) = model_heads(&(*handle).model);
    backbone.d_raw()
}

/// Distinct intents in the loaded database (the most predictions a classify
/// call can return); 0 if `handle` is null.
///
/// # Safety
/// `handle` must be null or a live handle from `zintent_open`.
#[no_mangle]
pub unsafe extern "C" fn zintent_intent_count(handle: *const ZintentClassifier) -> usize {
    if handle.is_null() {
        return 0;
    }
    (*handle).db.intents().len()
}

/// Classifies one utterance given as a row-major `n_frames` x `dim` buffer.
/// Writes up to `capacity` predictions, best first, and stores the number
/// written in `n_written`.
///
/// # Safety
/// `handle` must be a live handle, `frames` must hold `n_frames * dim`
/// doubles, `out` must have room for `capacity` predictions, and `n_written`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn zintent_classify(
    handle: *const ZintentClassifier,
    frames: *const f64,
    n_frames: usize,
    dim: usize,
    out: *mut ZintentPrediction,
    capacity: usize,
    n_written: *mut usize,
) -> ZintentStatus {
    guard(|| {
        if handle.is_null() || frames.is_null() || out.is_null() || n_written.is_null() {
            set_error("zintent_classify: null argument");
            return ZintentStatus::NullArg;
        }
        *n_written = 0;
        let data = slice::from_raw_parts(frames, n_frames * dim);
        let matrix = match Matrix::from_vec(n_frames, dim, data.to_vec()) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        let this = &*handle;
        let (backbone, heads) = model_heads(&this.model);
        let preds = match classify_zero_shot(&this.db, backbone, &heads, &matrix, capacity) {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        for (i, p) in preds.iter().enumerate() {
            *out.add(i) = ZintentPrediction {
                intent: p.intent,
                similarity: p.similarity,
                sentence_id: p.sentence_id,
            };
        }
        *n_written = preds.len();
        set_error("");
        ZintentStatus::Ok
    })
}

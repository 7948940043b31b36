//! C ABI over the `dcen` library.
//!
//! Every fallible function returns a [`DcenStatus`]; on failure the message
//! is available from [`dcen_last_error`] on the same thread. Datasets and
//! models are opaque handles released with their `_free` function. Strings
//! are NUL-terminated UTF-8. Panics never cross the boundary; they surface
//! as `DCEN_STATUS_PANIC`.

#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dcen::data::{generate_synthetic, load_dataset_dir, write_dataset, GzslDataset, SynthConfig};
use dcen::evaluator::{evaluate_gzsl, harmonic_mean};
use dcen::trainer::{train, TrainConfig, TrainState};
use dcen::{checkpoint, config, DcenError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Dimension = 5,
    Config = 6,
    Argument = 7,
    Validation = 8,
    UnknownClass = 9,
    EmptySplit = 10,
    Checkpoint = 11,
    NonFinite = 12,
    Panic = 13,
}

impl From<&DcenError> for DcenStatus {
    fn from(e: &DcenError) -> Self {
        match e {
            DcenError::Io { .. } => DcenStatus::Io,
            DcenError::Parse { .. } => DcenStatus::Parse,
            DcenError::DimensionMismatch(_) => DcenStatus::Dimension,
            DcenError::Config(_) => DcenStatus::Config,
            DcenError::InvalidArgument(_) => DcenStatus::Argument,
            DcenError::Validation(_) => DcenStatus::Validation,
            DcenError::UnknownClass(_) => DcenStatus::UnknownClass,
            DcenError::EmptySplit(_) => DcenStatus::EmptySplit,
            DcenError::Checkpoint(_) => DcenStatus::Checkpoint,
            DcenError::NonFinite { .. } => DcenStatus::NonFinite,
        }
    }
}

/// GZSL evaluation summary. Accuracies are percentages.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DcenReport {
    pub mca_u: f64,
    pub mca_s: f64,
    pub h: f64,
    pub num_test_seen: usize,
    pub num_test_unseen: usize,
}

/// Opaque dataset handle.
pub struct DcenDataset(GzslDataset);

/// Opaque trained-model handle: network state plus its training config.
pub struct DcenModel {
    state: TrainState,
    config: TrainConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

struct Failure(DcenStatus, String);

impl From<DcenError> for Failure {
    fn from(e: DcenError) -> Self {
        Failure(DcenStatus::from(&e), e.to_string())
    }
}

/// Runs `body`, recording any error or panic for `dcen_last_error`.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DcenStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DcenStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
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
            DcenStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: caller promises `p` is null or a live handle from this library.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(DcenStatus::NullPointer, format!("{what} is null")))
}

/// Required string argument.
fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(DcenStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: non-null and, per the contract, NUL-terminated.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(DcenStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Optional TOML text; null means all defaults.
fn toml_arg<T>(p: *const c_char, what: &str) -> Result<T, Failure>
where
    T: serde::de::DeserializeOwned + serde::Serialize + Default,
{
    let text = if p.is_null() { "" } else { str_arg(p, what)? };
    Ok(config::from_toml(text, what, &[])?)
}

fn out_ptr<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(DcenStatus::NullPointer, "output pointer is null".into()));
    }
    // SAFETY: checked non-null; cleared so callers never see a stale handle.
    unsafe { *out = ptr::null_mut() };
    Ok(())
}

/// Generates a synthetic dataset. `synth_toml` holds `SynthConfig` keys as
/// TOML text, or is null for the defaults.
///
/// # Safety
///
/// `synth_toml` is null or a NUL-terminated string; `out` is null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dcen_dataset_generate(
    synth_toml: *const c_char,
    out: *mut *mut DcenDataset,
) -> DcenStatus {
    guard(|| {
        out_ptr(out)?;
        let cfg: SynthConfig = toml_arg(synth_toml, "synth config")?;
        let ds = generate_synthetic(&cfg)?;
        // SAFETY: `out` checked by `out_ptr`.
        unsafe { *out = Box::into_raw(Box::new(DcenDataset(ds))) };
        Ok(())
    })
}

/// Loads a dataset directory written by `dcen synth` or
/// [`dcen_dataset_save`].
///
/// # Safety
///
/// `dir` is null or a NUL-terminated string; `out` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn dcen_dataset_load(dir: *const c_char, out: *mut *mut DcenDataset) -> DcenStatus {
    guard(|| {
        out_ptr(out)?;
        let ds = load_dataset_dir(Path::new(str_arg(dir, "dir")?))?;
        // SAFETY: `out` checked by `out_ptr`.
        unsafe { *out = Box::into_raw(Box::new(DcenDataset(ds))) };
        Ok(())
    })
}

/// # Safety
///
/// `ds` is null or a live dataset handle; `dir` is null or a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dcen_dataset_save(ds: *const DcenDataset, dir: *const c_char) -> DcenStatus {
    guard(|| {
        let ds = non_null(ds, "dataset")?;
        write_dataset(&ds.0, Path::new(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
///
/// `ds` is null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dcen_dataset_num_classes(ds: *const DcenDataset) -> usize {
    // SAFETY: null or a live handle.
    unsafe { ds.as_ref() }.map_or(0, |d| d.0.num_classes())
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
///
/// `ds` is null or a dataset handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcen_dataset_free(ds: *mut DcenDataset) {
    if !ds.is_null() {
        // SAFETY: produced by `Box::into_raw` in this library, freed once.
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Trains a model on `ds`. `train_toml` holds `TrainConfig` keys as TOML
/// text, or is null for the defaults.
///
/// # Safety
///
/// `ds` is null or a live dataset handle; `train_toml` is null or a
/// NUL-terminated string; `out` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn dcen_train(
    ds: *const DcenDataset,
    train_toml: *const c_char,
    out: *mut *mut DcenModel,
) -> DcenStatus {
    guard(|| {
        out_ptr(out)?;
        let ds = non_null(ds, "dataset")?;
        let config: TrainConfig = toml_arg(train_toml, "train config")?;
        let outcome = train(&ds.0, &config, None)?;
        let model = DcenModel { state: outcome.state, config };
        // SAFETY: `out` checked by `out_ptr`.
        unsafe { *out = Box::into_raw(Box::new(model)) };
        Ok(())
    })
}

/// # Safety
///
/// `path` is null or a NUL-terminated string; `out` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn dcen_model_load(path: *const c_char, out: *mut *mut DcenModel) -> DcenStatus {
    guard(|| {
        out_ptr(out)?;
        let (state, config) = checkpoint::load(Path::new(str_arg(path, "path")?))?;
        // SAFETY: `out` checked by `out_ptr`.
        unsafe { *out = Box::into_raw(Box::new(DcenModel { state, config })) };
        Ok(())
    })
}

/// # Safety
///
/// `model` is null or a live model handle; `path` is null or a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dcen_model_save(model: *const DcenModel, path: *const c_char) -> DcenStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        checkpoint::save(Path::new(str_arg(path, "path")?), &m.state, &m.config)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
///
/// `model` is null or a model handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dcen_model_free(model: *mut DcenModel) {
    if !model.is_null() {
        // SAFETY: produced by `Box::into_raw` in this library, freed once.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// GZSL evaluation of `model` on the test splits of `ds`.
///
/// # Safety
///
/// `model` and `ds` are null or live handles; `out` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn dcen_evaluate(
    model: *const DcenModel,
    ds: *const DcenDataset,
    out: *mut DcenReport,
) -> DcenStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let ds = non_null(ds, "dataset")?;
        if out.is_null() {
            return Err(Failure(DcenStatus::NullPointer, "report pointer is null".into()));
        }
        let r = evaluate_gzsl(&m.state.encoders, &ds.0)?;
        // SAFETY: checked non-null.
        unsafe {
            *out = DcenReport {
                mca_u: r.mca_u,
                mca_s: r.mca_s,
                h: r.h,
                num_test_seen: r.num_test_seen,
                num_test_unseen: r.num_test_unseen,
            }
        };
        Ok(())
    })
}

/// `2uv/(u+v)`, or 0 when both are 0.
#[no_mangle]
pub extern "C" fn dcen_harmonic_mean(mca_u: f64, mca_s: f64) -> f64 {
    harmonic_mean(mca_u, mca_s)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn dcen_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dcen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

//! C ABI over `spatial-mil`.
//!
//! Objects are opaque handles created by `sm_*_read` / `sm_*_load` /
//! `sm_bag_augment` and released with the matching `sm_*_free`. Every
//! fallible call returns an [`SmStatus`]; on failure a message is kept per
//! thread and can be read with [`sm_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use spatial_mil::io::{read_bag, write_bag};
use spatial_mil::models::{bag_features, forward, read_checkpoint};
use spatial_mil::priors::peripheral_distance;
use spatial_mil::{augment_features, Error, ModelParams, PriorConfig, SlideBag, SlideGeometry, TileCoord};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmStatus {
    Ok = 0,
    InvalidInput = 1,
    Config = 2,
    Numeric = 3,
    UndefinedMetric = 4,
    Format = 5,
    Io = 6,
    Generation = 7,
    NullPointer = 8,
    Panic = 9,
}

/// Opaque slide bag.
pub struct SmBag(SlideBag);

/// Opaque trained model.
pub struct SmModel(ModelParams);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SmStatus {
    match e {
        Error::InvalidInput(_) => SmStatus::InvalidInput,
        Error::Config(_) => SmStatus::Config,
        Error::Numeric(_) => SmStatus::Numeric,
        Error::UndefinedMetric(_) => SmStatus::UndefinedMetric,
        Error::Format { .. } => SmStatus::Format,
        Error::Io { .. } => SmStatus::Io,
        Error::Generation(_) => SmStatus::Generation,
    }
}

enum Fail {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SmStatus::Ok
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SmStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            SmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidInput(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn in_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next `sm_*` call on the same thread.
#[no_mangle]
pub extern "C" fn sm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Peripheral distance of a tile whose top-left corner is `(x, y)` on a
/// `width` x `height` slide.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sm_peripheral_distance(
    x: u64,
    y: u64,
    width: u64,
    height: u64,
    out: *mut f64,
) -> SmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let g = SlideGeometry::new(width, height)?;
        *out = peripheral_distance(TileCoord::new(x, y), g)?;
        Ok(())
    })
}

/// Reads an `MSIB` bag file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sm_bag_read(path: *const c_char, out: *mut *mut SmBag) -> SmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let bag = read_bag(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SmBag(bag)));
        Ok(())
    })
}

/// Writes a bag as an `MSIB` file.
///
/// # Safety
/// `bag` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sm_bag_write(bag: *const SmBag, path: *const c_char) -> SmStatus {
    guard(|| {
        let bag = in_arg(bag, "bag")?;
        write_bag(&path_arg(path, "path")?, &bag.0)?;
        Ok(())
    })
}

/// Number of tiles, or 0 for a null handle.
///
/// # Safety
/// `bag` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sm_bag_n_tiles(bag: *const SmBag) -> usize {
    bag.as_ref().map_or(0, |b| b.0.n_tiles())
}

/// Feature width, or 0 for a null handle.
///
/// # Safety
/// `bag` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sm_bag_feature_dim(bag: *const SmBag) -> usize {
    bag.as_ref().map_or(0, |b| b.0.feature_dim)
}

/// New bag with peripheral distance and/or neighbourhood scalars appended
/// (radius 0.10, epsilon 1e-6).
///
/// # Safety
/// `bag` must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sm_bag_augment(
    bag: *const SmBag,
    use_pd: bool,
    use_lin: bool,
    out: *mut *mut SmBag,
) -> SmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let bag = in_arg(bag, "bag")?;
        let cfg = PriorConfig {
            use_pd,
            use_lin,
            ..PriorConfig::none()
        };
        let aug = augment_features(&bag.0, &cfg)?;
        *out = Box::into_raw(Box::new(SmBag(aug)));
        Ok(())
    })
}

/// Releases a bag. Null is ignored.
///
/// # Safety
/// `bag` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn sm_bag_free(bag: *mut SmBag) {
    if !bag.is_null() {
        drop(Box::from_raw(bag));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sm_model_load(path: *const c_char, out: *mut *mut SmModel) -> SmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = read_checkpoint(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SmModel(m)));
        Ok(())
    })
}

/// Input width expected by the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sm_model_input_dim(model: *const SmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.input_dim)
}

/// Scores a bag. Writes the MSI, MSS and hypermutation logits to
/// `logits[0..3]` and, when `attention` is non-null, the per-tile attention
/// to `attention[0..attention_len]`; `attention_len` must then equal the
/// bag's tile count.
///
/// # Safety
/// Handles must come from this library; `logits` must hold 3 doubles and
/// `attention` (if non-null) `attention_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sm_model_forward(
    model: *const SmModel,
    bag: *const SmBag,
    logits: *mut f64,
    attention: *mut f64,
    attention_len: usize,
) -> SmStatus {
    guard(|| {
        let model = in_arg(model, "model")?;
        let bag = in_arg(bag, "bag")?;
        if logits.is_null() {
            return Err(Fail::Null("logits"));
        }
        if !attention.is_null() && attention_len != bag.0.n_tiles() {
            return Err(Error::InvalidInput(format!(
                "attention buffer holds {attention_len} values for {} tiles",
                bag.0.n_tiles()
            ))
            .into());
        }
        let out = forward(&model.0, &bag_features(&bag.0)?)?;
        std::slice::from_raw_parts_mut(logits, 3).copy_from_slice(&out.logits);
        if !attention.is_null() {
            std::slice::from_raw_parts_mut(attention, attention_len).copy_from_slice(&out.attention);
        }
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn sm_model_free(model: *mut SmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

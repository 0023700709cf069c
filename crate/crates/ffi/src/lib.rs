//! C ABI over the `wxpower` engine.
//!
//! Models are opaque `WxModel*` handles created by `wx_model_build*` or
//! `wx_model_load` and released with `wx_model_free`. Every fallible call
//! returns a [`WxStatus`]; on failure `wx_last_error` gives a message for
//! the calling thread. Input buffers are row-major `float` arrays in
//! N×C×H×W order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use wxpower::data::Source;
use wxpower::layers::Parameterized;
use wxpower::models::{load_checkpoint, save_checkpoint, ArchitectureSpec, Family, Model};
use wxpower::rng::Rng;
use wxpower::saliency::saliency_map;
use wxpower::tensor::Tensor;
use wxpower::Error;

/// Opaque model handle.
pub struct WxModel {
    model: Model<f32>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WxStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    Shape = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WxFamily {
    Linear = 0,
    Resnet = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WxSource {
    Solar = 0,
    Wind = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WxStatus {
    match e {
        Error::Config(_) => WxStatus::Config,
        Error::Data(_) => WxStatus::Data,
        Error::Numeric(_) => WxStatus::Numeric,
        Error::Shape(_) => WxStatus::Shape,
        Error::Io { .. } => WxStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (WxStatus, String)>) -> WxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WxStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            WxStatus::Panic
        }
    }
}

fn lift<T>(r: wxpower::Result<T>) -> Result<T, (WxStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (WxStatus, String) {
    (WxStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (WxStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    // SAFETY: caller passes a NUL-terminated string valid for this call.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| (WxStatus::Config, "path is not UTF-8".to_string()))?;
    Ok(Path::new(s))
}

fn emit(model: Model<f32>, out: *mut *mut WxModel) {
    let handle = Box::into_raw(Box::new(WxModel { model }));
    // SAFETY: `out` checked non-null by the caller of `emit`.
    unsafe { *out = handle };
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a freshly initialized model with the preset layer plan of
/// `family`, for `channels` (6 or 30) input channels on a `height`×`width`
/// grid.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn wx_model_build(
    family: WxFamily,
    channels: u32,
    height: u32,
    width: u32,
    seed: u64,
    out: *mut *mut WxModel,
) -> WxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let family = match family {
            WxFamily::Linear => Family::Linear,
            WxFamily::Resnet => Family::Resnet,
        };
        let spec = ArchitectureSpec::for_family(family, channels as usize).with_input_size(height as usize, width as usize);
        let model = lift(Model::build(spec, &mut Rng::new(seed)))?;
        emit(model, out);
        Ok(())
    })
}

/// Builds a model from the canonical `key=value` architecture text stored
/// in checkpoints.
///
/// # Safety
/// `spec` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn wx_model_build_from_spec(spec: *const c_char, seed: u64, out: *mut *mut WxModel) -> WxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if spec.is_null() {
            return Err(null("spec"));
        }
        // SAFETY: checked non-null; caller guarantees NUL termination.
        let text = unsafe { CStr::from_ptr(spec) }
            .to_str()
            .map_err(|_| (WxStatus::Config, "spec is not UTF-8".to_string()))?;
        let spec = lift(ArchitectureSpec::from_canonical_text(text))?;
        let model = lift(Model::build(spec, &mut Rng::new(seed)))?;
        emit(model, out);
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn wx_model_load(path: *const c_char, out: *mut *mut WxModel) -> WxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: forwarded caller contract.
        let p = unsafe { path_arg(path) }?;
        let model = lift(load_checkpoint(p))?;
        emit(model, out);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn wx_model_save(model: *const WxModel, path: *const c_char) -> WxStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or NULL.
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        // SAFETY: forwarded caller contract.
        let p = unsafe { path_arg(path) }?;
        lift(save_checkpoint(&m.model, p))
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wx_model_free(model: *mut WxModel) {
    if !model.is_null() {
        // SAFETY: handle was created by Box::into_raw in `emit`.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Trainable parameter count; 0 for NULL.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn wx_model_param_count(model: *const WxModel) -> u64 {
    // SAFETY: caller contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.model.param_count() as u64)
}

/// Writes the expected C, H, W of one input.
///
/// # Safety
/// `model` live; the three out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn wx_model_input_shape(
    model: *const WxModel,
    channels: *mut u32,
    height: *mut u32,
    width: *mut u32,
) -> WxStatus {
    guard(|| {
        // SAFETY: caller contract.
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if channels.is_null() || height.is_null() || width.is_null() {
            return Err(null("shape output"));
        }
        let s = m.model.spec();
        // SAFETY: checked non-null above.
        unsafe {
            *channels = s.input_channels as u32;
            *height = s.input_height as u32;
            *width = s.input_width as u32;
        }
        Ok(())
    })
}

fn input_len(m: &WxModel) -> usize {
    let s = m.model.spec();
    s.input_channels * s.input_height * s.input_width
}

/// Eval-mode estimates for `batch` inputs. `output` receives `batch`×2
/// floats: solar then wind MW per sample.
///
/// # Safety
/// `input` must hold `batch`·C·H·W floats and `output` room for `batch`·2.
#[no_mangle]
pub unsafe extern "C" fn wx_model_predict(
    model: *const WxModel,
    input: *const f32,
    batch: usize,
    output: *mut f32,
) -> WxStatus {
    guard(|| {
        // SAFETY: caller contract.
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if input.is_null() || output.is_null() {
            return Err(null("buffer"));
        }
        if batch == 0 {
            return Err((WxStatus::Shape, "batch must be at least 1".into()));
        }
        let n = input_len(m);
        // SAFETY: caller guarantees the lengths.
        let x = unsafe { std::slice::from_raw_parts(input, batch * n) }.to_vec();
        let s = m.model.spec();
        let t = lift(Tensor::from_vec(&[batch, s.input_channels, s.input_height, s.input_width], x))?;
        let y = lift(m.model.predict(&t))?;
        // SAFETY: caller guarantees room for batch*2 floats.
        unsafe { std::slice::from_raw_parts_mut(output, batch * 2) }.copy_from_slice(y.data());
        Ok(())
    })
}

/// Saliency map of one input (C·H·W floats) for one output, written as
/// H·W non-negative floats.
///
/// # Safety
/// `input` must hold C·H·W floats and `output` room for H·W.
#[no_mangle]
pub unsafe extern "C" fn wx_model_saliency(
    model: *const WxModel,
    input: *const f32,
    source: WxSource,
    output: *mut f32,
) -> WxStatus {
    guard(|| {
        // SAFETY: caller contract.
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if input.is_null() || output.is_null() {
            return Err(null("buffer"));
        }
        let s = m.model.spec();
        let n = input_len(m);
        // SAFETY: caller guarantees the length.
        let x = unsafe { std::slice::from_raw_parts(input, n) }.to_vec();
        let t = lift(Tensor::from_vec(&[1, s.input_channels, s.input_height, s.input_width], x))?;
        let src = match source {
            WxSource::Solar => Source::Solar,
            WxSource::Wind => Source::Wind,
        };
        let map = lift(saliency_map(&m.model, &t, src))?;
        // SAFETY: caller guarantees room for H*W floats.
        let out = unsafe { std::slice::from_raw_parts_mut(output, map.values.len()) };
        for (o, v) in out.iter_mut().zip(&map.values) {
            *o = *v as f32;
        }
        Ok(())
    })
}

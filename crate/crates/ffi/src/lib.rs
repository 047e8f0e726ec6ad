//! C ABI over the `crosslink` engine.
//!
//! Every fallible function returns a [`ClStatus`]; on failure the message is
//! available from [`cl_last_error`] on the same thread. Models are opaque
//! [`ClModel`] handles created by [`cl_model_load`] and released with
//! [`cl_model_free`]. Undefined metrics are reported as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use crosslink::autodiff::Tape;
use crosslink::metrics::{BinaryMask, CaseMetrics, MaskPair};
use crosslink::net::{Checkpoint, Network};
use crosslink::tensor::{DType, Element, Tensor};
use crosslink::{loss, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Format = 4,
    Checkpoint = 5,
    Io = 6,
    NonFinite = 7,
    Panic = 8,
}

impl From<&Error> for ClStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape { .. } => ClStatus::Shape,
            Error::InvalidArgument(_) | Error::Config(_) => ClStatus::InvalidArgument,
            Error::Format { .. } => ClStatus::Format,
            Error::Checkpoint(_) => ClStatus::Checkpoint,
            Error::NonFinite(_) => ClStatus::NonFinite,
            Error::Io { .. } => ClStatus::Io,
        }
    }
}

/// Per-case scores. Rates are percentages; `hd` is in pixels. NaN when undefined.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct ClMetrics {
    pub dsc: f64,
    pub sen: f64,
    pub spe: f64,
    pub or_: f64,
    pub ur: f64,
    pub hd: f64,
}

enum Inner {
    F32(Network<f32>),
    F64(Network<f64>),
}

/// Opaque handle to a loaded network.
pub struct ClModel {
    inner: Inner,
    variant: CString,
    base_width: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(ClStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(ClStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ClStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ClStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ClStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ClStatus::Panic
        }
    }
}

fn plane_len(height: usize, width: usize) -> Result<usize, Fail> {
    if height == 0 || width == 0 {
        return Err(Fail(ClStatus::InvalidArgument, "height and width must be positive".into()));
    }
    height
        .checked_mul(width)
        .ok_or_else(|| Fail(ClStatus::InvalidArgument, "height × width overflows".into()))
}

/// Message of the most recent failure on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_model_load(path: *const c_char, out: *mut *mut ClModel) -> ClStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(ClStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let ckpt = Checkpoint::load(Path::new(path))?;
        let inner = if ckpt.get("head.weight").is_some_and(|v| v.dtype() == DType::F64) {
            Inner::F64(ckpt.to_network()?)
        } else {
            Inner::F32(ckpt.to_network()?)
        };
        let model = ClModel {
            inner,
            variant: CString::new(ckpt.variant.name()).unwrap_or_default(),
            base_width: ckpt.base_width()?,
        };
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`cl_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cl_model_free(model: *mut ClModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Variant name of a loaded model; owned by the handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cl_model_variant(model: *const ClModel) -> *const c_char {
    model.as_ref().map_or(std::ptr::null(), |m| m.variant.as_ptr())
}

/// Base channel width of a loaded model, 0 for null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cl_model_base_width(model: *const ClModel) -> usize {
    model.as_ref().map_or(0, |m| m.base_width)
}

fn predict_into<T: Element>(net: &mut Network<T>, pixels: &[f32], h: usize, w: usize, out: &mut [f32]) -> Result<(), Fail> {
    let x = Tensor::new([1, 1, h, w], pixels.iter().map(|&p| T::of(f64::from(p))).collect())?;
    net.check_input(x.shape())?;
    let probs = net.predict(&x)?;
    for (o, p) in out.iter_mut().zip(probs.data()) {
        *o = p.as_f64() as f32;
    }
    Ok(())
}

/// Foreground probabilities for one `height×width` grayscale image in [0, 1].
/// Both buffers hold `height*width` row-major values.
///
/// # Safety
/// `pixels` and `probs_out` must point to `height*width` floats.
#[no_mangle]
pub unsafe extern "C" fn cl_model_predict(
    model: *mut ClModel,
    pixels: *const f32,
    height: usize,
    width: usize,
    probs_out: *mut f32,
) -> ClStatus {
    guard(|| {
        let model = model.as_mut().ok_or_else(|| null("model"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if probs_out.is_null() {
            return Err(null("probs_out"));
        }
        let n = plane_len(height, width)?;
        let input = std::slice::from_raw_parts(pixels, n);
        if let Some(bad) = input.iter().find(|p| !p.is_finite()) {
            return Err(Fail(ClStatus::NonFinite, format!("pixel value {bad}")));
        }
        let out = std::slice::from_raw_parts_mut(probs_out, n);
        match &mut model.inner {
            Inner::F32(net) => predict_into(net, input, height, width, out),
            Inner::F64(net) => predict_into(net, input, height, width, out),
        }
    })
}

unsafe fn mask_from(ptr: *const u8, h: usize, w: usize, n: usize) -> Result<BinaryMask, Fail> {
    let raw = std::slice::from_raw_parts(ptr, n);
    Ok(BinaryMask::new(h, w, raw.iter().map(|&v| u8::from(v != 0)).collect())?)
}

/// Scores a predicted mask against ground truth (nonzero bytes are foreground).
///
/// # Safety
/// `prediction` and `ground_truth` must point to `height*width` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_mask_metrics(
    prediction: *const u8,
    ground_truth: *const u8,
    height: usize,
    width: usize,
    out: *mut ClMetrics,
) -> ClStatus {
    guard(|| {
        if prediction.is_null() {
            return Err(null("prediction"));
        }
        if ground_truth.is_null() {
            return Err(null("ground_truth"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let n = plane_len(height, width)?;
        let pair = MaskPair::new(
            mask_from(prediction, height, width, n)?,
            mask_from(ground_truth, height, width, n)?,
        )?;
        let m = CaseMetrics::compute("", &pair);
        let v = |x: Option<f64>| x.unwrap_or(f64::NAN);
        *out = ClMetrics {
            dsc: v(m.dsc),
            sen: v(m.sen),
            spe: v(m.spe),
            or_: v(m.or),
            ur: v(m.ur),
            hd: v(m.hd),
        };
        Ok(())
    })
}

/// Attention loss of one image: vertical map, horizontal map and mask, all
/// `height*width` row-major. Writes 0 when any input is constant.
///
/// # Safety
/// The three inputs must point to `height*width` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_attention_loss(
    vertical: *const f64,
    horizontal: *const f64,
    mask: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
) -> ClStatus {
    guard(|| {
        for (p, what) in [(vertical, "vertical"), (horizontal, "horizontal"), (mask, "mask")] {
            if p.is_null() {
                return Err(null(what));
            }
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let n = plane_len(height, width)?;
        let load = |p: *const f64| -> Result<Tensor<f64>, Fail> {
            let data = std::slice::from_raw_parts(p, n).to_vec();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Fail(ClStatus::NonFinite, "attention input contains a non-finite value".into()));
            }
            Ok(Tensor::new([1, 1, height, width], data)?)
        };
        let (v, h, m) = (load(vertical)?, load(horizontal)?, load(mask)?);
        let mut tape = Tape::new();
        let (av, ah) = (tape.leaf(v, false), tape.leaf(h, false));
        let l = loss::attention_loss(&mut tape, av, ah, &m)?;
        *out = tape.value(l.loss).data()[0];
        Ok(())
    })
}

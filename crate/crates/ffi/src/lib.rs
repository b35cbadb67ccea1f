//! C ABI over the `swinir` library.
//!
//! Every function returns a [`SwinirStatus`]; on failure a message is kept
//! per thread and read back with [`swinir_last_error`]. Models are opaque
//! handles created by [`swinir_model_load`], [`swinir_model_load_bytes`] or
//! [`swinir_model_new`] and released with [`swinir_model_free`]. A handle may
//! be shared between threads for concurrent inference.
//!
//! Images cross the boundary as interleaved height × width × channels
//! buffers, `float` in `[0, 1]` or `uint8_t`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use swinir::data::ImageBuffer;
use swinir::metrics;
use swinir::model::{checkpoint, SwinIR, SwinIRConfig, Task, Upsampler};
use swinir::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwinirStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Checksum = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque model handle.
pub struct SwinirModel {
    inner: SwinIR<f32>,
}

/// Architecture description for [`swinir_model_new`] and
/// [`swinir_model_config`]. `task`: 0 sr, 1 denoise, 2 car. `upsampler`:
/// 0 pixelshuffle, 1 pixelshuffledirect.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SwinirConfig {
    pub num_blocks: u32,
    pub layers_per_block: u32,
    pub window: u32,
    pub channels: u32,
    pub heads: u32,
    pub mlp_ratio: u32,
    pub task: u32,
    pub scale: u32,
    pub in_channels: u32,
    pub out_channels: u32,
    pub upsampler: u32,
    pub num_feat: u32,
    pub block_residual: bool,
}

impl SwinirConfig {
    fn to_model(self) -> Result<SwinIRConfig, Error> {
        Ok(SwinIRConfig {
            num_blocks: self.num_blocks as usize,
            layers_per_block: self.layers_per_block as usize,
            window: self.window as usize,
            channels: self.channels as usize,
            heads: self.heads as usize,
            mlp_ratio: self.mlp_ratio as usize,
            task: Task::from_code(self.task)?,
            scale: self.scale as usize,
            in_channels: self.in_channels as usize,
            out_channels: self.out_channels as usize,
            upsampler: Upsampler::from_code(self.upsampler)?,
            num_feat: self.num_feat as usize,
            block_residual: self.block_residual,
        })
    }

    fn from_model(c: &SwinIRConfig) -> Self {
        Self {
            num_blocks: c.num_blocks as u32,
            layers_per_block: c.layers_per_block as u32,
            window: c.window as u32,
            channels: c.channels as u32,
            heads: c.heads as u32,
            mlp_ratio: c.mlp_ratio as u32,
            task: c.task.code(),
            scale: c.scale as u32,
            in_channels: c.in_channels as u32,
            out_channels: c.out_channels as u32,
            upsampler: c.upsampler.code(),
            num_feat: c.num_feat as u32,
            block_residual: c.block_residual,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SwinirStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) => SwinirStatus::Shape,
            Error::InvalidArgument(_) | Error::Config(_) => SwinirStatus::InvalidArgument,
            Error::Autograd(_) | Error::NonFinite(_) => SwinirStatus::Numeric,
            Error::ImageFormat(_) | Error::Checkpoint(_) => SwinirStatus::Format,
            Error::Checksum { .. } => SwinirStatus::Checksum,
            Error::Io { .. } => SwinirStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SwinirStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SwinirStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SwinirStatus::Ok,
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
            set_error(format!("internal panic: {msg}"));
            SwinirStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const SwinirModel) -> Result<&'a SwinirModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn image_len(h: usize, w: usize, c: usize) -> Result<usize, Failure> {
    h.checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure(SwinirStatus::InvalidArgument, format!("bad image size {h}x{w}x{c}")))
}

unsafe fn store_model(out: *mut *mut SwinirModel, model: SwinIR<f32>) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(SwinirModel { inner: model }));
    Ok(())
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn swinir_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn swinir_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file. `*out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn swinir_model_load(path: *const c_char, out: *mut *mut SwinirModel) -> SwinirStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(SwinirStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let (cfg, params) = checkpoint::load(path)?;
        store_model(out, SwinIR::from_parts(cfg, params)?)
    })
}

/// Loads a checkpoint from memory.
#[no_mangle]
pub unsafe extern "C" fn swinir_model_load_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut SwinirModel,
) -> SwinirStatus {
    guard(|| {
        let bytes = slice(data, len, "data")?;
        let (cfg, params) = checkpoint::from_bytes(bytes)?;
        store_model(out, SwinIR::from_parts(cfg, params)?)
    })
}

/// Freshly initialized model from `seed`.
#[no_mangle]
pub unsafe extern "C" fn swinir_model_new(
    config: *const SwinirConfig,
    seed: u64,
    out: *mut *mut SwinirModel,
) -> SwinirStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or_else(|| null("config"))?.to_model()?;
        store_model(out, SwinIR::new(cfg, seed)?)
    })
}

/// Releases a handle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn swinir_model_free(model: *mut SwinirModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the checkpoint bytes to `buf` when `capacity` suffices; `*len`
/// always receives the required size.
#[no_mangle]
pub unsafe extern "C" fn swinir_model_save_bytes(
    model: *const SwinirModel,
    buf: *mut u8,
    capacity: usize,
    len: *mut usize,
) -> SwinirStatus {
    guard(|| {
        let m = model_ref(model)?;
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        let bytes = checkpoint::to_bytes(m.inner.config(), m.inner.params())?;
        *len = bytes.len();
        if capacity < bytes.len() {
            return Err(Failure(
                SwinirStatus::BufferTooSmall,
                format!("need {} bytes, have {capacity}", bytes.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn swinir_model_config(model: *const SwinirModel, out: *mut SwinirConfig) -> SwinirStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = SwinirConfig::from_model(m.inner.config());
        Ok(())
    })
}

/// Number of scalar parameters.
#[no_mangle]
pub unsafe extern "C" fn swinir_model_param_count(model: *const SwinirModel, out: *mut u64) -> SwinirStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.inner.params().num_scalars() as u64;
        Ok(())
    })
}

/// Output extent for an input of `height × width`.
#[no_mangle]
pub unsafe extern "C" fn swinir_model_output_size(
    model: *const SwinirModel,
    height: usize,
    width: usize,
    out_height: *mut usize,
    out_width: *mut usize,
) -> SwinirStatus {
    guard(|| {
        let m = model_ref(model)?;
        let r = m.inner.config().scale;
        *out_height.as_mut().ok_or_else(|| null("out_height"))? = height * r;
        *out_width.as_mut().ok_or_else(|| null("out_width"))? = width * r;
        Ok(())
    })
}

fn run_model(m: &SwinirModel, img: &ImageBuffer) -> Result<ImageBuffer, Failure> {
    let cfg = m.inner.config();
    if img.channels() != cfg.in_channels {
        return Err(Failure(
            SwinirStatus::Shape,
            format!(
                "input has {} channels, model expects {}",
                img.channels(),
                cfg.in_channels
            ),
        ));
    }
    Ok(ImageBuffer::from_tensor(&m.inner.infer(&img.to_tensor())?)?)
}

fn check_capacity(have: usize, need: usize) -> Result<(), Failure> {
    if have < need {
        return Err(Failure(
            SwinirStatus::BufferTooSmall,
            format!("output needs {need} values, have {have}"),
        ));
    }
    Ok(())
}

/// Restores a float image. `output` must hold
/// `out_height · out_width · out_channels` values.
#[no_mangle]
pub unsafe extern "C" fn swinir_model_infer(
    model: *const SwinirModel,
    input: *const f32,
    height: usize,
    width: usize,
    channels: usize,
    output: *mut f32,
    output_len: usize,
) -> SwinirStatus {
    guard(|| {
        let m = model_ref(model)?;
        let px = slice(input, image_len(height, width, channels)?, "input")?;
        let img = ImageBuffer::from_f32(height, width, channels, px.to_vec())?;
        let res = run_model(m, &img)?;
        let values = res.unit();
        check_capacity(output_len, values.len())?;
        if output.is_null() {
            return Err(null("output"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), output, values.len());
        Ok(())
    })
}

/// Restores an 8-bit image; the result is rounded and clamped to 0..=255.
#[no_mangle]
pub unsafe extern "C" fn swinir_model_infer_u8(
    model: *const SwinirModel,
    input: *const u8,
    height: usize,
    width: usize,
    channels: usize,
    output: *mut u8,
    output_len: usize,
) -> SwinirStatus {
    guard(|| {
        let m = model_ref(model)?;
        let px = slice(input, image_len(height, width, channels)?, "input")?;
        let img = ImageBuffer::from_u8(height, width, channels, px.to_vec())?;
        let res = run_model(m, &img)?;
        let values = res.as_u8();
        check_capacity(output_len, values.len())?;
        if output.is_null() {
            return Err(null("output"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), output, values.len());
        Ok(())
    })
}

unsafe fn u8_pair(
    a: *const u8,
    b: *const u8,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<(ImageBuffer, ImageBuffer), Failure> {
    let n = image_len(height, width, channels)?;
    let a = ImageBuffer::from_u8(height, width, channels, slice(a, n, "a")?.to_vec())?;
    let b = ImageBuffer::from_u8(height, width, channels, slice(b, n, "b")?.to_vec())?;
    Ok((a, b))
}

/// PSNR in dB of two 8-bit images, ignoring `border` pixels at each edge.
/// Identical images give positive infinity.
#[no_mangle]
pub unsafe extern "C" fn swinir_psnr_u8(
    a: *const u8,
    b: *const u8,
    height: usize,
    width: usize,
    channels: usize,
    border: usize,
    out: *mut f64,
) -> SwinirStatus {
    guard(|| {
        let (a, b) = u8_pair(a, b, height, width, channels)?;
        *out.as_mut().ok_or_else(|| null("out"))? = metrics::psnr(&a, &b, border)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn swinir_ssim_u8(
    a: *const u8,
    b: *const u8,
    height: usize,
    width: usize,
    channels: usize,
    border: usize,
    out: *mut f64,
) -> SwinirStatus {
    guard(|| {
        let (a, b) = u8_pair(a, b, height, width, channels)?;
        *out.as_mut().ok_or_else(|| null("out"))? = metrics::ssim(&a, &b, border)?;
        Ok(())
    })
}

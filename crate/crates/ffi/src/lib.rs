//! C interface to the `.gsv` decoder.
//!
//! Models are opaque handles created by [`gsv_model_open`] or
//! [`gsv_model_from_bytes`] and released with [`gsv_model_free`]. Every
//! fallible call returns a [`GsvStatus`]; on failure the message is available
//! from [`gsv_last_error_message`] on the same thread. A handle may be shared
//! between threads for concurrent rendering.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gsvideo::codec::{compute_bpp, read_bitstream};
use gsvideo::{Error, Model, RasterConfig};

/// Result codes. `GSV_STATUS_OK` is zero; everything else is an error.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GsvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadMagic = 4,
    VersionMismatch = 5,
    Truncated = 6,
    ChecksumMismatch = 7,
    Corrupt = 8,
    BufferTooSmall = 9,
    FrameOutOfRange = 10,
    Internal = 11,
}

/// Opaque decoder handle.
pub struct GsvModel {
    model: Model<f32>,
    raster: RasterConfig,
    stream_bytes: usize,
}

/// Summary of an open model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GsvModelInfo {
    pub width: u32,
    pub height: u32,
    pub num_frames: u32,
    pub num_gaussians: u32,
    pub num_params: u64,
    pub stream_bytes: u64,
    pub bpp: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> GsvStatus {
    match e {
        Error::BadMagic => GsvStatus::BadMagic,
        Error::VersionMismatch { .. } => GsvStatus::VersionMismatch,
        Error::Truncated { .. } => GsvStatus::Truncated,
        Error::ChecksumMismatch { .. } => GsvStatus::ChecksumMismatch,
        Error::Corrupt(_) => GsvStatus::Corrupt,
        Error::Io(_) | Error::Unreadable { .. } | Error::Unwritable { .. } => GsvStatus::Io,
        Error::InvalidArgument(_) | Error::InvalidConfig(_) | Error::ShapeMismatch(_) => {
            GsvStatus::InvalidArgument
        }
        _ => GsvStatus::Internal,
    }
}

fn fail(status: GsvStatus, msg: impl Into<String>) -> GsvStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting panics into `GsvStatus::Internal`.
fn guarded(f: impl FnOnce() -> GsvStatus) -> GsvStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(GsvStatus::Internal, "internal panic"),
    }
}

fn open_bytes(bytes: &[u8], out: *mut *mut GsvModel) -> GsvStatus {
    match read_bitstream(bytes) {
        Ok(model) => {
            let raster = model.raster_config(true);
            let handle = Box::new(GsvModel {
                model,
                raster,
                stream_bytes: bytes.len(),
            });
            // SAFETY: caller checked `out` is non-null.
            unsafe { *out = Box::into_raw(handle) };
            GsvStatus::Ok
        }
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

/// Opens a `.gsv` file. On success `*out` receives a handle to release with
/// [`gsv_model_free`]; on failure it is set to null.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsv_model_open(path: *const c_char, out: *mut *mut GsvModel) -> GsvStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(GsvStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(GsvStatus::InvalidArgument, "path is not UTF-8");
        };
        match std::fs::read(path) {
            Ok(bytes) => open_bytes(&bytes, out),
            Err(e) => fail(GsvStatus::Io, format!("cannot read {path}: {e}")),
        }
    })
}

/// Parses an in-memory bitstream; the bytes are not retained.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gsv_model_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut GsvModel,
) -> GsvStatus {
    guarded(|| {
        if data.is_null() || out.is_null() {
            return fail(GsvStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        open_bytes(std::slice::from_raw_parts(data, len), out)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gsv_model_free(model: *mut GsvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `info` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsv_model_info(
    model: *const GsvModel,
    info: *mut GsvModelInfo,
) -> GsvStatus {
    guarded(|| {
        let (Some(m), false) = (model.as_ref(), info.is_null()) else {
            return fail(GsvStatus::NullPointer, "null argument");
        };
        let cfg = &m.model.config;
        *info = GsvModelInfo {
            width: cfg.width as u32,
            height: cfg.height as u32,
            num_frames: m.model.num_frames() as u32,
            num_gaussians: cfg.num_gaussians as u32,
            num_params: gsvideo::count_params(cfg) as u64,
            stream_bytes: m.stream_bytes as u64,
            bpp: compute_bpp(
                m.stream_bytes as u64,
                m.model.num_frames(),
                cfg.height,
                cfg.width,
            ),
        };
        GsvStatus::Ok
    })
}

fn render(
    m: &GsvModel,
    frame: u32,
    needed: usize,
    len: usize,
) -> Result<gsvideo::Image<f32>, GsvStatus> {
    if frame as usize >= m.model.num_frames() {
        return Err(fail(
            GsvStatus::FrameOutOfRange,
            format!(
                "frame {frame} out of range (clip has {})",
                m.model.num_frames()
            ),
        ));
    }
    if len < needed {
        return Err(fail(
            GsvStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {needed}"),
        ));
    }
    m.model
        .render_frame(frame as usize, &m.raster)
        .map_err(|e| fail(status_of(&e), e.to_string()))
}

/// Renders frame `frame` as 8-bit RGB, row-major, into `out`, which must
/// hold at least `width * height * 3` bytes. Values are clamped and rounded
/// exactly as the `decode` command writes PNGs.
///
/// # Safety
/// `model` must be a live handle and `out` must point to `out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gsv_model_render_frame(
    model: *const GsvModel,
    frame: u32,
    out: *mut u8,
    out_len: usize,
) -> GsvStatus {
    guarded(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return fail(GsvStatus::NullPointer, "null argument");
        };
        let needed = m.model.width() * m.model.height() * 3;
        match render(m, frame, needed, out_len) {
            Ok(img) => {
                let bytes = img.to_rgb8();
                std::slice::from_raw_parts_mut(out, needed).copy_from_slice(&bytes);
                GsvStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Like [`gsv_model_render_frame`] but writes the unclamped float image.
///
/// # Safety
/// `model` must be a live handle and `out` must point to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn gsv_model_render_frame_f32(
    model: *const GsvModel,
    frame: u32,
    out: *mut f32,
    out_len: usize,
) -> GsvStatus {
    guarded(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return fail(GsvStatus::NullPointer, "null argument");
        };
        let needed = m.model.width() * m.model.height() * 3;
        match render(m, frame, needed, out_len) {
            Ok(img) => {
                std::slice::from_raw_parts_mut(out, needed).copy_from_slice(&img.data);
                GsvStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn gsv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// `8 * stream_bytes / (frames * height * width)`; zero if any dimension is zero.
#[no_mangle]
pub extern "C" fn gsv_compute_bpp(stream_bytes: u64, frames: u32, height: u32, width: u32) -> f64 {
    if frames == 0 || height == 0 || width == 0 {
        return 0.0;
    }
    compute_bpp(
        stream_bytes,
        frames as usize,
        height as usize,
        width as usize,
    )
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gsv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

//! C ABI over the trill encoder and log-mel frontend.
//!
//! Every fallible call returns a [`TrillStatus`]; on failure the message is
//! kept per thread and can be read with [`trill_last_error`]. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use trill::corpus::{resample_linear, Waveform, SAMPLE_RATE};
use trill::encoder::{load_checkpoint, EncoderModel, FINAL_TAP};
use trill::frontend::{ClipFeatures, ContextWindow, Frontend, FrontendConfig};
use trill::probes::Representation;
use trill::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrillStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    UnknownTap = 5,
    TooShort = 6,
    BufferTooSmall = 7,
    Numeric = 8,
    Internal = 9,
}

/// A loaded encoder checkpoint.
pub struct TrillEncoder {
    model: EncoderModel,
}

/// Log-mel frontend with the default configuration.
pub struct TrillFrontend {
    frontend: Frontend,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
}

fn status_of(err: &Error) -> TrillStatus {
    match err {
        Error::Io { .. } => TrillStatus::Io,
        Error::WavParse { .. } | Error::Format(_) | Error::Corruption { .. } | Error::UnsupportedFormat(_) => {
            TrillStatus::Format
        }
        Error::UnknownTap { .. } => TrillStatus::UnknownTap,
        Error::TooShort { .. } => TrillStatus::TooShort,
        Error::NonFinite { .. } | Error::Divergence { .. } => TrillStatus::Numeric,
        _ => TrillStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (TrillStatus, String)>) -> TrillStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TrillStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TrillStatus::Internal
        }
    }
}

fn lib<T>(r: trill::Result<T>) -> Result<T, (TrillStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (TrillStatus, String) {
    (TrillStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (TrillStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (TrillStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (TrillStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn tap_or_final<'a>(tap: *const c_char) -> Result<&'a str, (TrillStatus, String)> {
    if tap.is_null() {
        Ok(FINAL_TAP)
    } else {
        c_str(tap, "tap")
    }
}

unsafe fn write_out(values: &[f64], out: *mut f64, capacity: usize) -> Result<(), (TrillStatus, String)> {
    if capacity < values.len() {
        return Err((
            TrillStatus::BufferTooSmall,
            format!("output needs {} values, buffer holds {}", values.len(), capacity),
        ));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn waveform(samples: &[f32], sample_rate: u32) -> trill::Result<Waveform> {
    if sample_rate == SAMPLE_RATE {
        Waveform::new(samples.to_vec(), SAMPLE_RATE)
    } else {
        Waveform::new(samples.to_vec(), sample_rate)?;
        Waveform::new(resample_linear(samples, sample_rate, SAMPLE_RATE), SAMPLE_RATE)
    }
}

/// Copies the last error message of the calling thread into `buf`
/// (NUL-terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn trill_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a checkpoint written by `trill train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trill_encoder_load(path: *const c_char, out: *mut *mut TrillEncoder) -> TrillStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = lib(load_checkpoint(c_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(TrillEncoder { model }));
        Ok(())
    })
}

/// Releases an encoder; null is ignored.
///
/// # Safety
/// `encoder` must come from [`trill_encoder_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trill_encoder_free(encoder: *mut TrillEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Width of `tap` (null means the final embedding).
///
/// # Safety
/// `encoder` must be a live handle; `tap` null or NUL-terminated; `width` writable.
#[no_mangle]
pub unsafe extern "C" fn trill_encoder_tap_width(
    encoder: *const TrillEncoder,
    tap: *const c_char,
    width: *mut usize,
) -> TrillStatus {
    guard(|| {
        let enc = encoder.as_ref().ok_or_else(|| null("encoder"))?;
        if width.is_null() {
            return Err(null("width"));
        }
        *width = lib(enc.model.config.tap_width(tap_or_final(tap)?))?;
        Ok(())
    })
}

/// Embeds one context window given band-major (`n_mels` rows of
/// `n_frames` values) log-mel features.
///
/// # Safety
/// `window` must hold `n_mels * n_frames` values; `out` must hold `out_len`.
#[no_mangle]
pub unsafe extern "C" fn trill_encoder_embed_window(
    encoder: *const TrillEncoder,
    tap: *const c_char,
    window: *const f64,
    n_mels: usize,
    n_frames: usize,
    out: *mut f64,
    out_len: usize,
) -> TrillStatus {
    guard(|| {
        let enc = encoder.as_ref().ok_or_else(|| null("encoder"))?;
        let values = slice(window, n_mels * n_frames, "window")?.to_vec();
        if values.is_empty() {
            return Err((TrillStatus::InvalidArgument, "window is empty".into()));
        }
        let w = ContextWindow {
            clip_id: String::new(),
            start_frame: 0,
            n_mels,
            n_frames,
            values,
        };
        let emb = lib(enc.model.embed(&[w], tap_or_final(tap)?))?;
        write_out(emb.row(0), out, out_len)
    })
}

/// Clip-level vector: mean of the tap embeddings over half-overlapping
/// windows of the clip. Audio at other rates is resampled to 16 kHz.
///
/// # Safety
/// `samples` must hold `n_samples` values; `out` must hold `out_len`.
#[no_mangle]
pub unsafe extern "C" fn trill_encoder_embed_clip(
    encoder: *const TrillEncoder,
    tap: *const c_char,
    samples: *const f32,
    n_samples: usize,
    sample_rate: u32,
    out: *mut f64,
    out_len: usize,
) -> TrillStatus {
    guard(|| {
        let enc = encoder.as_ref().ok_or_else(|| null("encoder"))?;
        let tap = tap_or_final(tap)?;
        let wave = lib(waveform(slice(samples, n_samples, "samples")?, sample_rate))?;
        let config = FrontendConfig::for_evaluation();
        let feats: ClipFeatures = lib(lib(Frontend::new(config.clone()))?.stft_logmel(&wave, "clip"))?;
        let rep = lib(Representation::encoder("ffi", enc.model.clone(), tap))?;
        write_out(&lib(rep.clip_vector(&feats, &config))?, out, out_len)
    })
}

/// Creates a frontend with the default configuration (64 bands, 25/10 ms).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trill_frontend_new(out: *mut *mut TrillFrontend) -> TrillStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let frontend = lib(Frontend::new(FrontendConfig::default()))?;
        *out = Box::into_raw(Box::new(TrillFrontend { frontend }));
        Ok(())
    })
}

/// Releases a frontend; null is ignored.
///
/// # Safety
/// `frontend` must come from [`trill_frontend_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trill_frontend_free(frontend: *mut TrillFrontend) {
    if !frontend.is_null() {
        drop(Box::from_raw(frontend));
    }
}

/// Number of mel bands per frame.
///
/// # Safety
/// `frontend` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn trill_frontend_n_mels(frontend: *const TrillFrontend) -> usize {
    frontend.as_ref().map_or(0, |f| f.frontend.config().n_mels)
}

/// Frames produced for `n_samples` samples of 16 kHz audio.
///
/// # Safety
/// `frontend` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn trill_frontend_frame_count(frontend: *const TrillFrontend, n_samples: usize) -> usize {
    frontend.as_ref().map_or(0, |f| f.frontend.frame_count(n_samples))
}

/// Log-mel features, frame-major (`n_frames` rows of `n_mels` values).
/// The frame count is written to `n_frames` even when the buffer is too small.
///
/// # Safety
/// `samples` must hold `n_samples` values; `out` must hold `out_len`;
/// `n_frames` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trill_frontend_logmel(
    frontend: *const TrillFrontend,
    samples: *const f32,
    n_samples: usize,
    sample_rate: u32,
    out: *mut f64,
    out_len: usize,
    n_frames: *mut usize,
) -> TrillStatus {
    guard(|| {
        let fe = frontend.as_ref().ok_or_else(|| null("frontend"))?;
        if n_frames.is_null() {
            return Err(null("n_frames"));
        }
        *n_frames = 0;
        let wave = lib(waveform(slice(samples, n_samples, "samples")?, sample_rate))?;
        let feats = lib(fe.frontend.stft_logmel(&wave, "clip"))?;
        *n_frames = feats.n_frames;
        write_out(&feats.frames, out, out_len)
    })
}

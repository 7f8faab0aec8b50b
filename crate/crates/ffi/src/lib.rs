//! C ABI over the `echomsa` library.
//!
//! Every fallible function returns an [`EchoStatus`]; on failure a
//! description is available from [`echomsa_last_error`] on the same thread.
//! Models live behind the opaque [`EchoModel`] handle, created by
//! [`echomsa_model_new`] or [`echomsa_model_load`] and released with
//! [`echomsa_model_free`]. Arrays are passed as pointer plus length;
//! log-probabilities are row-major `[frames, vocab]` doubles.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use echomsa::harness::{RunConfig, ScheduleConfig};
use echomsa::layers::HasParams;
use echomsa::loss::{ctc_loss, greedy_decode, LabelSequence};
use echomsa::model::{checkpoint, Model};
use echomsa::numerics::{no_grad, Tensor};
use echomsa::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EchoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Contract = 4,
    Numeric = 5,
    Config = 6,
    Format = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque model handle.
pub struct EchoModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> EchoStatus {
    match err {
        Error::Dimension { .. } => EchoStatus::Dimension,
        Error::Contract(_) => EchoStatus::Contract,
        Error::Numeric(_) => EchoStatus::Numeric,
        Error::Config(_) => EchoStatus::Config,
        Error::Format { .. } => EchoStatus::Format,
        Error::Io { .. } => EchoStatus::Io,
    }
}

struct Failure(EchoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(EchoStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(EchoStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EchoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            EchoStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EchoStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(model: *const EchoModel) -> Result<&'a Model, Failure> {
    model.as_ref().map(|m| &m.model).ok_or_else(|| null("model"))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = value;
    Ok(())
}

/// Message for the last failed call on this thread, or NULL after a
/// successful one. Valid until the next call into this library.
#[no_mangle]
pub extern "C" fn echomsa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn echomsa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a randomly initialized model from run-config TOML text (`NULL`
/// or empty for defaults) and a seed.
#[no_mangle]
pub unsafe extern "C" fn echomsa_model_new(config_toml: *const c_char, seed: u64, out: *mut *mut EchoModel) -> EchoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_toml(c_str(config_toml, "config_toml")?)?
        };
        let model = Model::new(cfg.model_config()?, seed)?;
        *out = Box::into_raw(Box::new(EchoModel { model }));
        Ok(())
    })
}

/// Loads a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn echomsa_model_load(path: *const c_char, out: *mut *mut EchoModel) -> EchoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = checkpoint::load(Path::new(c_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(EchoModel { model }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn echomsa_model_save(model: *const EchoModel, path: *const c_char) -> EchoStatus {
    guard(|| {
        let m = model_ref(model)?;
        checkpoint::save(m, Path::new(c_str(path, "path")?))?;
        Ok(())
    })
}

/// Releases a handle; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn echomsa_model_free(model: *mut EchoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Output symbols including the blank (index 0); 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn echomsa_model_vocab_size(model: *const EchoModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.vocab_size)
}

/// Samples per encoder frame; 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn echomsa_model_frame_len(model: *const EchoModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.frame_len)
}

/// Trainable scalar count; 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn echomsa_model_num_params(model: *const EchoModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_params())
}

/// Frames produced for a waveform of `num_samples` samples.
#[no_mangle]
pub unsafe extern "C" fn echomsa_model_num_frames(model: *const EchoModel, num_samples: usize) -> usize {
    model
        .as_ref()
        .map_or(0, |m| num_samples / m.model.config.frame_len.max(1))
}

/// Runs the model on `waveform[num_samples]` and writes log-probabilities
/// `[frames, vocab]` into `out[out_len]`. `frames_out` receives the frame
/// count even when the buffer is too small.
#[no_mangle]
pub unsafe extern "C" fn echomsa_model_forward(
    model: *const EchoModel,
    waveform: *const f64,
    num_samples: usize,
    out: *mut f64,
    out_len: usize,
    frames_out: *mut usize,
) -> EchoStatus {
    guard(|| {
        let m = model_ref(model)?;
        let wave = slice(waveform, num_samples, "waveform")?;
        let frames = num_samples / m.config.frame_len;
        write_out(frames_out, frames, "frames_out")?;
        let needed = frames * m.config.vocab_size;
        if out_len < needed {
            return Err(Failure(
                EchoStatus::BufferTooSmall,
                format!("output needs {needed} doubles, got {out_len}"),
            ));
        }
        let lp = no_grad(|| m.forward(wave))?;
        slice_mut(out, out_len, "out")?[..needed].copy_from_slice(&lp.data());
        Ok(())
    })
}

fn log_prob_tensor(log_probs: &[f64], frames: usize, vocab: usize) -> Result<Tensor, Failure> {
    if frames == 0 || vocab < 2 {
        return Err(invalid("need frames >= 1 and vocab >= 2"));
    }
    Ok(Tensor::new(&[frames, vocab], log_probs.to_vec())?)
}

/// Best-path decode of `log_probs[frames * vocab]`. Writes at most
/// `capacity` symbols to `labels_out` and the full length to `len_out`.
#[no_mangle]
pub unsafe extern "C" fn echomsa_greedy_decode(
    log_probs: *const f64,
    frames: usize,
    vocab: usize,
    labels_out: *mut usize,
    capacity: usize,
    len_out: *mut usize,
) -> EchoStatus {
    guard(|| {
        let lp = log_prob_tensor(slice(log_probs, frames * vocab, "log_probs")?, frames, vocab)?;
        let decoded = greedy_decode(&lp)?;
        let symbols = decoded.symbols();
        write_out(len_out, symbols.len(), "len_out")?;
        if capacity < symbols.len() {
            return Err(Failure(
                EchoStatus::BufferTooSmall,
                format!("decode has {} symbols, capacity {capacity}", symbols.len()),
            ));
        }
        slice_mut(labels_out, capacity, "labels_out")?[..symbols.len()].copy_from_slice(symbols);
        Ok(())
    })
}

/// CTC negative log-likelihood of `labels[num_labels]` (no blanks) under
/// `log_probs[frames * vocab]`. Infeasible targets give `+inf`.
#[no_mangle]
pub unsafe extern "C" fn echomsa_ctc_loss(
    log_probs: *const f64,
    frames: usize,
    vocab: usize,
    labels: *const usize,
    num_labels: usize,
    loss_out: *mut f64,
) -> EchoStatus {
    guard(|| {
        let lp = log_prob_tensor(slice(log_probs, frames * vocab, "log_probs")?, frames, vocab)?;
        let y = LabelSequence::new(slice(labels, num_labels, "labels")?.to_vec(), vocab)?;
        let loss = no_grad(|| ctc_loss(&lp, &y))?;
        write_out(loss_out, loss.item(), "loss_out")
    })
}

/// Learning rate at `step` for the default three-stage schedule spread
/// over `total_steps`.
#[no_mangle]
pub unsafe extern "C" fn echomsa_lr_at(step: usize, total_steps: usize, rate_out: *mut f64) -> EchoStatus {
    guard(|| {
        let cfg = ScheduleConfig::for_steps(total_steps);
        cfg.validate()?;
        write_out(rate_out, cfg.lr_at(step), "rate_out")
    })
}

/// Learning rate at `step` for explicit per-stage base `rates` and
/// exclusive end `boundaries`, both of length `num_stages`.
#[no_mangle]
pub unsafe extern "C" fn echomsa_lr_at_stages(
    rates: *const f64,
    boundaries: *const usize,
    num_stages: usize,
    step: usize,
    rate_out: *mut f64,
) -> EchoStatus {
    guard(|| {
        let cfg = ScheduleConfig {
            stage_rates: slice(rates, num_stages, "rates")?.to_vec(),
            stage_boundaries: slice(boundaries, num_stages, "boundaries")?.to_vec(),
            ..ScheduleConfig::for_steps(1)
        };
        cfg.validate()?;
        write_out(rate_out, cfg.lr_at(step), "rate_out")
    })
}

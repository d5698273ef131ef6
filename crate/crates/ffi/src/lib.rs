//! C ABI over the `cslstm` crate.
//!
//! Every fallible function returns a [`CslstmStatus`]; on failure the message
//! is available from [`cslstm_last_error`] on the same thread. Models are
//! opaque handles released with [`cslstm_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cslstm::checkpoint::Checkpoint;
use cslstm::config::{Config, ScoreSplit};
use cslstm::eval::evaluate;
use cslstm::pipeline::{score_series, train_from_config};
use cslstm::series::TimeSeries;
use cslstm::wavelet::{default_level, denoise, WaveletBasis, WaveletKind};
use cslstm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CslstmStatus {
    Ok = 0,
    /// Bad argument, including null pointers and invalid UTF-8.
    Argument = 1,
    Config = 2,
    /// Input data could not be ingested or does not fit the model.
    Data = 3,
    Numeric = 4,
    Io = 5,
    Checkpoint = 6,
    Compatibility = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CslstmWavelet {
    Haar = 0,
    Db4 = 1,
}

/// Best-F1 summary of one labelled score series.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CslstmF1 {
    pub best_f1: f64,
    pub best_precision: f64,
    pub best_recall: f64,
    pub best_threshold: f64,
    pub delay_f1: f64,
    pub delay_threshold: f64,
}

/// Opaque trained model.
pub struct CslstmModel {
    ckpt: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> CslstmStatus {
    match e {
        Error::Argument(_) => CslstmStatus::Argument,
        Error::Config(_) => CslstmStatus::Config,
        Error::Numeric(_) => CslstmStatus::Numeric,
        Error::Io { .. } => CslstmStatus::Io,
        Error::Checkpoint(_) => CslstmStatus::Checkpoint,
        Error::Compatibility(_) => CslstmStatus::Compatibility,
        _ => CslstmStatus::Data,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Error>) -> CslstmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CslstmStatus::Ok
        }
        Ok(Err(e)) => {
            let s = status_of(&e);
            set_last_error(e.to_string());
            s
        }
        Err(_) => {
            set_last_error("internal panic".into());
            CslstmStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(Error::Argument(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Argument(format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Error> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Error::Argument(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Error> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Error::Argument(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cslstm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cslstm_model_load(path: *const c_char, out: *mut *mut CslstmModel) -> CslstmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Error::Argument("out is null".into()));
        }
        let ckpt = Checkpoint::load(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(CslstmModel { ckpt }));
        Ok(())
    })
}

/// Trains a model from a config file (with `data.path` set) into a new handle.
///
/// # Safety
/// `config_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cslstm_model_train(config_path: *const c_char, out: *mut *mut CslstmModel) -> CslstmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Error::Argument("out is null".into()));
        }
        let config = Config::from_file(path_arg(config_path, "config_path")?)?;
        let outcome = train_from_config(&config, &mut std::io::sink())?;
        *out = Box::into_raw(Box::new(CslstmModel {
            ckpt: outcome.checkpoint,
        }));
        Ok(())
    })
}

/// Writes the model as a checkpoint file.
///
/// # Safety
/// `model` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cslstm_model_save(model: *const CslstmModel, path: *const c_char) -> CslstmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| Error::Argument("model is null".into()))?;
        model.ckpt.save(path_arg(path, "path")?)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cslstm_model_free(model: *mut CslstmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of leading points that cannot be scored.
///
/// # Safety
/// `model` must come from this library or be null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn cslstm_model_warmup(model: *const CslstmModel) -> usize {
    model.as_ref().map_or(0, |m| m.ckpt.model.config.total_window)
}

/// Scores `len` raw values. `scores` receives `len` entries; the first
/// [`cslstm_model_warmup`] are NaN.
///
/// # Safety
/// `values` and `scores` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cslstm_model_score(
    model: *const CslstmModel,
    values: *const f64,
    len: usize,
    scores: *mut f64,
) -> CslstmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| Error::Argument("model is null".into()))?;
        let values = slice_arg(values, len, "values")?;
        let out = out_arg(scores, len, "scores")?;
        let series = TimeSeries::from_values(values.to_vec());
        let scored = score_series(&model.ckpt, &series, ScoreSplit::All)?;
        let skip = len - scored.len();
        out[..skip].fill(f64::NAN);
        out[skip..].copy_from_slice(&scored.score);
        Ok(())
    })
}

/// Wavelet-denoises `len` values into `out`. `level` 0 picks the default depth.
///
/// # Safety
/// `values` and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cslstm_denoise(
    values: *const f64,
    len: usize,
    basis: CslstmWavelet,
    level: usize,
    out: *mut f64,
) -> CslstmStatus {
    guard(|| {
        let values = slice_arg(values, len, "values")?;
        let out = out_arg(out, len, "out")?;
        let kind = match basis {
            CslstmWavelet::Haar => WaveletKind::Haar,
            CslstmWavelet::Db4 => WaveletKind::Db4,
        };
        let level = if level == 0 { default_level(len) } else { level };
        out.copy_from_slice(&denoise(values, &WaveletBasis::new(kind), level)?);
        Ok(())
    })
}

/// Best F1 with point adjustment and delay adjustment with budget `k`.
/// `labels` holds 0 or 1 per point.
///
/// # Safety
/// `scores` and `labels` must point to `len` elements and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn cslstm_best_f1(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    k: usize,
    out: *mut CslstmF1,
) -> CslstmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Error::Argument("out is null".into()));
        }
        let scores = slice_arg(scores, len, "scores")?;
        let labels = slice_arg(labels, len, "labels")?;
        let r = evaluate(&[(scores, labels)], k, 0)?;
        *out = CslstmF1 {
            best_f1: r.best.f1,
            best_precision: r.best.confusion.precision(),
            best_recall: r.best.confusion.recall(),
            best_threshold: r.best.threshold,
            delay_f1: r.delay.f1,
            delay_threshold: r.delay.threshold,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_are_stable() {
        assert_eq!(CslstmStatus::Ok as i32, 0);
        assert_eq!(CslstmStatus::Internal as i32, 8);
    }
}

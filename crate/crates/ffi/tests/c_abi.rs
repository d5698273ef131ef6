use std::ffi::{CStr, CString};
use std::ptr;

use cslstm::config::Config;
use cslstm::synth::{generate, write_csv, SynthConfig, SynthKind};
use cslstm_ffi::*;

fn last_error() -> String {
    let p = cslstm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn best_f1_on_a_separable_series() {
    let scores = [0.1, 0.9, 0.2];
    let labels = [0u8, 1, 0];
    let mut out = CslstmF1 {
        best_f1: 0.0,
        best_precision: 0.0,
        best_recall: 0.0,
        best_threshold: 0.0,
        delay_f1: 0.0,
        delay_threshold: 0.0,
    };
    let s = unsafe { cslstm_best_f1(scores.as_ptr(), labels.as_ptr(), 3, 7, &mut out) };
    assert_eq!(s, CslstmStatus::Ok);
    assert_eq!(out.best_f1, 1.0);
    assert_eq!(out.delay_f1, 1.0);
    assert_eq!(out.best_threshold, 0.9);
}

#[test]
fn errors_carry_a_code_and_message() {
    let s = unsafe { cslstm_best_f1(ptr::null(), ptr::null(), 3, 7, ptr::null_mut()) };
    assert_eq!(s, CslstmStatus::Argument);
    assert!(last_error().contains("null"));

    let mut m = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let s = unsafe { cslstm_model_load(missing.as_ptr(), &mut m) };
    assert_eq!(s, CslstmStatus::Io);
    assert!(last_error().contains("/nonexistent/model.ckpt"));
    assert!(m.is_null());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, "not a checkpoint").unwrap();
    let s = unsafe { cslstm_model_load(cstr(&bad).as_ptr(), &mut m) };
    assert_eq!(s, CslstmStatus::Checkpoint);

    unsafe { cslstm_model_free(ptr::null_mut()) };
    assert_eq!(unsafe { cslstm_model_warmup(ptr::null()) }, 0);
}

#[test]
fn denoise_matches_the_library() {
    let x: Vec<f64> = (0..256).map(|i| (i as f64 * 0.2).sin() + if i % 7 == 0 { 0.3 } else { -0.05 }).collect();
    let mut out = vec![0.0; x.len()];
    let s = unsafe { cslstm_denoise(x.as_ptr(), x.len(), CslstmWavelet::Db4, 3, out.as_mut_ptr()) };
    assert_eq!(s, CslstmStatus::Ok);
    let expect = cslstm::wavelet::denoise(
        &x,
        &cslstm::wavelet::WaveletBasis::new(cslstm::wavelet::WaveletKind::Db4),
        3,
    )
    .unwrap();
    assert_eq!(out, expect);

    let s = unsafe { cslstm_denoise(x.as_ptr(), 3, CslstmWavelet::Haar, 5, out.as_mut_ptr()) };
    assert_ne!(s, CslstmStatus::Ok);
}

#[test]
fn train_save_load_score() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s.csv");
    let series = generate(&SynthConfig::new(SynthKind::Mixed, 800, 3, 8)).unwrap();
    write_csv(&series, &data).unwrap();
    let cfg_path = dir.path().join("run.conf");
    let mut cfg = Config::default();
    cfg.apply_overrides(&[
        "model.seasonal_window=8",
        "model.total_window=16",
        "model.d_model=6",
        "train.max_epochs=2",
        "train.batch_size=32",
    ])
    .unwrap();
    let mut text = String::from("data.path = s.csv\n");
    for (k, v) in cfg.to_pairs() {
        if k != "data.path" {
            text.push_str(&format!("{k} = {v}\n"));
        }
    }
    std::fs::write(&cfg_path, text).unwrap();

    let mut m = ptr::null_mut();
    assert_eq!(unsafe { cslstm_model_train(cstr(&cfg_path).as_ptr(), &mut m) }, CslstmStatus::Ok);
    assert!(!m.is_null());
    assert_eq!(unsafe { cslstm_model_warmup(m) }, 16);

    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(unsafe { cslstm_model_save(m, cstr(&ckpt).as_ptr()) }, CslstmStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { cslstm_model_load(cstr(&ckpt).as_ptr(), &mut loaded) }, CslstmStatus::Ok);

    let mut a = vec![0.0; series.len()];
    let mut b = vec![0.0; series.len()];
    unsafe {
        assert_eq!(cslstm_model_score(m, series.values.as_ptr(), series.len(), a.as_mut_ptr()), CslstmStatus::Ok);
        assert_eq!(cslstm_model_score(loaded, series.values.as_ptr(), series.len(), b.as_mut_ptr()), CslstmStatus::Ok);
    }
    assert!(a[..16].iter().all(|v| v.is_nan()));
    assert!(a[16..].iter().all(|v| v.is_finite() && *v >= 0.0));
    assert_eq!(a[16..], b[16..]);

    let short = [1.0; 4];
    let s = unsafe { cslstm_model_score(m, short.as_ptr(), 4, a.as_mut_ptr()) };
    assert_eq!(s, CslstmStatus::Data);
    unsafe {
        cslstm_model_free(m);
        cslstm_model_free(loaded);
    }
}

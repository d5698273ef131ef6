use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cslstm(args: &[&str]) -> Out {
    let o = Command::new(env!("CARGO_BIN_EXE_cslstm"))
        .args(args)
        .env("CSLSTM_THREADS", "2")
        .output()
        .expect("spawn cslstm");
    Out {
        code: o.status.code().expect("exit code"),
        stdout: String::from_utf8(o.stdout).unwrap(),
        stderr: String::from_utf8(o.stderr).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set", "model.seasonal_window=8",
    "--set", "model.total_window=24",
    "--set", "model.context_history=8",
    "--set", "model.d_model=12",
    "--set", "train.batch_size=32",
    "--set", "train.max_epochs=15",
    "--set", "train.lr=0.005",
];

/// A small model trained once on a synthetic series, shared by the score tests.
struct Trained {
    _dir: tempfile::TempDir,
    data: PathBuf,
    ckpt: PathBuf,
    stderr: String,
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("mixed.csv");
        let ckpt = dir.path().join("m.ckpt");
        let out = cslstm(&["synth", "--kind", "point", "--len", "1600", "--seed", "4", "--season", "8", "--out", s(&data), "--set", "model.seasonal_window=8", "--set", "model.total_window=24"]);
        assert_eq!(out.code, 0, "{}", out.stderr);
        let mut args = vec!["train", "--data", s(&data), "--out-ckpt", s(&ckpt)];
        args.extend_from_slice(SMALL);
        let out = cslstm(&args);
        assert_eq!(out.code, 0, "{}", out.stderr);
        Trained {
            data,
            ckpt,
            stderr: out.stderr,
            _dir: dir,
        }
    })
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn help_and_usage_exit_codes() {
    let h = cslstm(&["--help"]);
    assert_eq!(h.code, 0);
    for sub in ["denoise", "train", "score", "eval", "synth"] {
        assert!(h.stdout.contains(sub));
    }
    assert_eq!(cslstm(&["--version"]).code, 0);
    assert_eq!(cslstm(&[]).code, 1);
    assert_eq!(cslstm(&["frobnicate"]).code, 1);
    assert_eq!(cslstm(&["eval"]).code, 1);
    assert_eq!(cslstm(&["synth", "--kind", "spike", "--len", "10", "--out", "x.csv"]).code, 1);
}

#[test]
fn unknown_config_key_is_named() {
    let out = cslstm(&["train", "--out-ckpt", "x.ckpt", "--set", "lr_rate=0.1"]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("lr_rate"), "{}", out.stderr);
    assert!(out.stderr.starts_with("cslstm train:"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "seed = 3\nlr_rate = 0.1\n").unwrap();
    let out = cslstm(&["train", "--config", s(&cfg), "--out-ckpt", "x.ckpt"]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("lr_rate"));
}

#[test]
fn missing_data_file_is_named() {
    let out = cslstm(&["train", "--data", "/no/such/series.csv", "--out-ckpt", "x.ckpt"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("/no/such/series.csv"), "{}", out.stderr);
}

#[test]
fn train_writes_checkpoint_and_log() {
    let t = trained();
    let text = std::fs::read_to_string(&t.ckpt).unwrap();
    assert!(text.starts_with("CSLSTM-CKPT 1\n"));
    assert!(t.stderr.contains("epoch=1 train_loss="));
    let field = |name: &str| -> f64 {
        let tail = t.stderr.split(&format!("{name}=")).nth(1).unwrap();
        tail.split_whitespace().next().unwrap().parse().unwrap()
    };
    assert!(field("best_val_loss") < field("initial_val_loss"));
}

#[test]
fn default_model_improves_on_a_sine() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sine.csv");
    let mut csv = String::from("timestamp,value\n");
    for i in 0..2000 {
        let v = (2.0 * std::f64::consts::PI * i as f64 / 48.0).sin();
        csv.push_str(&format!("{i},{v}\n"));
    }
    std::fs::write(&data, csv).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let log = dir.path().join("train.log");
    let out = cslstm(&[
        "train", "--data", s(&data), "--out-ckpt", s(&ckpt), "--log", s(&log),
        "--set", "train.max_epochs=2",
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let log = std::fs::read_to_string(&log).unwrap();
    assert_eq!(log.lines().count(), 2);
    let val = |line: &str| -> f64 { line.split("val_loss=").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap() };
    let initial: f64 = out.stderr.split("initial_val_loss=").nth(1).unwrap().trim().parse().unwrap();
    assert!(val(log.lines().last().unwrap()) < initial);
}

#[test]
fn score_is_deterministic_and_small_on_training_data() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = cslstm(&["score", "--ckpt", s(&t.ckpt), "--in", s(&t.data), "--out", s(p), "--split", "all"]);
        assert_eq!(out.code, 0, "{}", out.stderr);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("timestamp,value,score,mu_s,sigma_s,mu_c,sigma_c,label\n"));

    // the first 35% of the series is the training split
    let mut train_scores: Vec<f64> = column(&text, "score")[..560 - 24].to_vec();
    train_scores.sort_by(f64::total_cmp);
    let median = train_scores[train_scores.len() / 2];
    assert!(median < 1.0, "median {median}");

    let test = dir.path().join("t.csv");
    assert_eq!(cslstm(&["score", "--ckpt", s(&t.ckpt), "--in", s(&t.data), "--out", s(&test)]).code, 0);
    let n = std::fs::read_to_string(&test).unwrap().lines().count() - 1;
    assert_eq!(n, 1600 - 800);
}

#[test]
fn score_rejects_empty_input_and_mismatched_config() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = cslstm(&["score", "--ckpt", s(&t.ckpt), "--in", s(&empty), "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(out.code, 2, "{}", out.stderr);
    assert!(out.stderr.starts_with("cslstm score:"));

    let header_only = dir.path().join("h.csv");
    std::fs::write(&header_only, "timestamp,value\n").unwrap();
    let out = cslstm(&["score", "--ckpt", s(&t.ckpt), "--in", s(&header_only), "--out", s(&dir.path().join("o.csv"))]);
    assert_ne!(out.code, 0);
    assert!(out.stderr.starts_with("cslstm score:"));

    let out = cslstm(&[
        "score", "--ckpt", s(&t.ckpt), "--in", s(&t.data), "--out", s(&dir.path().join("o.csv")),
        "--set", "model.seasonal_window=8", "--set", "model.total_window=24",
        "--set", "model.context_history=8", "--set", "model.d_model=16",
    ]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("model.d_model: 12 vs 16"), "{}", out.stderr);

    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, "CSLSTM-CKPT 1\n[config]\n").unwrap();
    let out = cslstm(&["score", "--ckpt", s(&bad), "--in", s(&t.data), "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(out.code, 2);
}

fn hand_built(dir: &Path, labels: [u8; 10]) -> PathBuf {
    let scores = [0.1, 0.2, 0.2, 0.9, 0.1, 0.3, 0.2, 0.7, 0.1, 0.1];
    let mut csv = String::from("timestamp,value,score,label\n");
    for i in 0..10 {
        csv.push_str(&format!("{i},0,{},{}\n", scores[i], labels[i]));
    }
    let p = dir.join(format!("scores{}.csv", labels.iter().sum::<u8>()));
    std::fs::write(&p, csv).unwrap();
    p
}

#[test]
fn eval_on_a_hand_built_file() {
    let dir = tempfile::tempdir().unwrap();
    // one anomalous segment at 2..4 whose onset scores 0.2
    let p = hand_built(dir.path(), [0, 0, 1, 1, 0, 0, 0, 0, 0, 0]);

    let out = cslstm(&["eval", "--in", s(&p)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.contains("points=10 anomalies=2"));
    assert!(out.stdout.contains("best_f1=1.000000"), "{}", out.stdout);
    assert!(out.stdout.contains("delay_f1_k7=1.000000"));

    // with no delay allowed the segment is caught only at 0.2, which also
    // flags the normal points at 0.2, 0.2, 0.3 and 0.7: F1 = 4 / (4 + 4)
    let out = cslstm(&["eval", "--in", s(&p), "--k", "0"]);
    assert!(out.stdout.contains("delay_f1_k0=0.500000"), "{}", out.stdout);
    let out = cslstm(&["eval", "--in", s(&p), "--k", "1"]);
    assert!(out.stdout.contains("delay_f1_k1=1.000000"));
    let out = cslstm(&["eval", "--in", s(&p), "--dataset", "yahoo"]);
    assert!(out.stdout.contains("delay_f1_k3="));
    let out = cslstm(&["eval", "--in", s(&p), "--set", "eval.k=0", "--k", "1"]);
    assert!(out.stdout.contains("delay_f1_k1="));
}

#[test]
fn eval_warns_without_anomalies_and_pools_files() {
    let dir = tempfile::tempdir().unwrap();
    let none = hand_built(dir.path(), [0; 10]);
    let out = cslstm(&["eval", "--in", s(&none)]);
    assert_eq!(out.code, 0);
    assert!(out.stdout.contains("warning="));
    assert!(out.stdout.contains("best_f1=0.000000"));

    let some = hand_built(dir.path(), [0, 0, 1, 1, 0, 0, 0, 0, 0, 0]);
    let out = cslstm(&["eval", "--in", s(&some), s(&none)]);
    assert_eq!(out.code, 0);
    assert_eq!(out.stdout.matches("best_f1=").count(), 3);
    let agg = out.stdout.split("[aggregate]").nth(1).unwrap();
    assert!(agg.contains("points=20 anomalies=2"));

    let no_labels = dir.path().join("nl.csv");
    std::fs::write(&no_labels, "timestamp,value,score\n0,0,1\n").unwrap();
    let out = cslstm(&["eval", "--in", s(&no_labels)]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("label"));
}

#[test]
fn synth_is_bit_identical_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        assert_eq!(cslstm(&["synth", "--kind", "point", "--len", "10000", "--seed", "42", "--out", s(p)]).code, 0);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.as_bytes(), std::fs::read(&b).unwrap().as_slice());
    let labels = column(&text, "label");
    assert_eq!(labels.len(), 10_000);
    let count = labels.iter().filter(|l| **l == 1.0).count();
    assert!((25..=80).contains(&count), "{count}");

    let out = cslstm(&["synth", "--kind", "mixed", "--len", "400", "--seed", "1", "--out", s(&a)]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("480"), "{}", out.stderr);
}

#[test]
fn denoise_writes_three_columns() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("d.csv");
    let out = cslstm(&["denoise", "--in", s(&t.data), "--out", s(&out_path), "--basis", "haar", "--level", "2"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.starts_with("timestamp,raw,denoised\n"));
    let raw = column(&text, "raw");
    let den = column(&text, "denoised");
    assert_eq!(raw.len(), 1600);
    assert_ne!(raw, den);
    let out = cslstm(&["denoise", "--in", s(&t.data), "--out", s(&out_path), "--level", "40"]);
    assert_ne!(out.code, 0);
}

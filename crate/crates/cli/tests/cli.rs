use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polarlab::eval::{read_csv, BerRow, HistRow, SnrRow, TimingRow};
use polarlab::training::TraceRow;
use tempfile::TempDir;

fn polarlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polarlab"))
        .args(args)
        .env("POLARLAB_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), stderr(&out));
    out
}

/// Small, fast experiment config in `dir`.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("exp.json");
    let text = format!(
        r#"{{"arch":"mlp-rnnd","seed":5,"train":{{"epochs":100,"log_every":1}},
            "eval":{{"ebn0_db":[1.0,3.0],"min_bit_errors":50,"max_frames":20000,"frames":2000,
                     "pdf_ebn0_db":[2.0],"bench_frames":300,"bench_batch":100}}{extra}}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn rows<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    read_csv(fs::File::open(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn params_match_reference_counts() {
    assert_eq!(stdout(&ok(polarlab(&["params", "mlp-nnd"]))).trim(), "27336");
    assert_eq!(stdout(&ok(polarlab(&["params", "mlp-rnnd"]))).trim(), "25816");
}

#[test]
fn invalid_arch_is_a_usage_error() {
    let out = polarlab(&["params", "transformer"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    for name in polarlab::models::ARCH_NAMES {
        assert!(err.contains(name), "{err}");
    }

    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = polarlab(&["--config", s(&cfg), "--out", s(dir.path()), "train", "--arch", "mlp-xyz"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cnn-rnnd"));
}

#[test]
fn bad_configs_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#","colour":"blue""#);
    let out = polarlab(&["--config", s(&cfg), "ber"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("colour"));

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train":{"batch_size":0}}"#).unwrap();
    assert_eq!(polarlab(&["--config", s(&cfg), "train"]).status.code(), Some(2));
    assert_eq!(polarlab(&["--config", "/no/such/file.json", "ber"]).status.code(), Some(2));
    assert_eq!(polarlab(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn train_writes_reproducible_checkpoint_and_trace() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = ok(polarlab(&["--config", s(&cfg), "--out", s(&a), "train"]));
    assert!(stdout(&out).contains("final loss"));
    ok(polarlab(&["--config", s(&cfg), "--out", s(&b), "train"]));

    let ck = fs::read(a.join("checkpoint.json")).unwrap();
    assert_eq!(ck, fs::read(b.join("checkpoint.json")).unwrap());
    // 100 epochs of ceil(256 / 64) = 4 iterations, one row each.
    let trace: Vec<TraceRow> = rows(&a.join("trace.csv"));
    assert_eq!(trace.len(), 400);
    let header = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert!(header.starts_with("epoch,step,total_loss,denoise_loss,decode_loss\n"));

    // A different seed gives a different model.
    let c = dir.path().join("c");
    ok(polarlab(&["--config", s(&cfg), "--out", s(&c), "--seed", "6", "train"]));
    assert_ne!(ck, fs::read(c.join("checkpoint.json")).unwrap());
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let args = ["--config", s(&cfg), "--out", s(dir.path()), "ber"];
    ok(polarlab(&args));
    let out = polarlab(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    ok(polarlab(&forced));
}

#[test]
fn ber_rows_cover_every_decoder_and_point() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let model_dir = dir.path().join("model");
    ok(polarlab(&["--config", s(&cfg), "--out", s(&model_dir), "train"]));
    let ck = model_dir.join("checkpoint.json");

    // SC alone needs no checkpoint.
    let sc_only = dir.path().join("sc");
    ok(polarlab(&["--config", s(&cfg), "--out", s(&sc_only), "ber"]));
    let sc_rows: Vec<BerRow> = rows(&sc_only.join("ber.csv"));
    assert_eq!(sc_rows.len(), 2);
    assert!(sc_rows.iter().all(|r| r.decoder == "sc"));

    let both = dir.path().join("both");
    ok(polarlab(&["--config", s(&cfg), "--out", s(&both), "ber", s(&ck), s(&ck)]));
    let all: Vec<BerRow> = rows(&both.join("ber.csv"));
    assert_eq!(all.len(), 3 * 2);
    let text = fs::read_to_string(both.join("ber.csv")).unwrap();
    assert!(text.starts_with("decoder,ebn0_db,frames,bit_errors,ber\n"));

    // Same seed, different worker counts: byte-identical output.
    let w1 = dir.path().join("w1");
    let w3 = dir.path().join("w3");
    ok(polarlab(&["--config", s(&cfg), "--out", s(&w1), "--workers", "1", "ber", s(&ck)]));
    ok(polarlab(&["--config", s(&cfg), "--out", s(&w3), "--workers", "3", "ber", s(&ck)]));
    assert_eq!(fs::read(w1.join("ber.csv")).unwrap(), fs::read(w3.join("ber.csv")).unwrap());
}

#[test]
fn snr_pdf_and_bench_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let rnnd = dir.path().join("rnnd");
    ok(polarlab(&["--config", s(&cfg), "--out", s(&rnnd), "train"]));
    let ck = rnnd.join("checkpoint.json");

    ok(polarlab(&["--config", s(&cfg), "--out", s(&rnnd), "snr", s(&ck)]));
    let snr: Vec<SnrRow> = rows(&rnnd.join("snr.csv"));
    assert_eq!(snr.len(), 2);

    ok(polarlab(&["--config", s(&cfg), "--out", s(&rnnd), "pdf", s(&ck)]));
    let pdf: Vec<HistRow> = rows(&rnnd.join("pdf.csv"));
    assert_eq!(pdf.len(), 80);
    let mass: f64 = pdf.iter().map(|r| r.density_received * (r.bin_right - r.bin_left)).sum();
    assert!((mass - 1.0).abs() < 1e-6);

    ok(polarlab(&["--config", s(&cfg), "--out", s(&rnnd), "bench"]));
    let timing: Vec<TimingRow> = rows(&rnnd.join("timing.csv"));
    assert_eq!(timing.len(), 7);
    assert_eq!(timing[0].decoder, "sc");
    assert!(timing.iter().all(|r| r.seconds_per_frame > 0.0 && r.frames == 300));
}

#[test]
fn residual_commands_reject_nnd_and_missing_checkpoints() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let nnd = dir.path().join("nnd");
    ok(polarlab(&["--config", s(&cfg), "--out", s(&nnd), "train", "--arch", "mlp-nnd", "--epochs", "2"]));
    let ck = nnd.join("checkpoint.json");
    for cmd in ["snr", "pdf"] {
        let out = polarlab(&["--config", s(&cfg), "--out", s(&nnd), cmd, s(&ck)]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(stderr(&out).contains("RNND"), "{}", stderr(&out));
    }
    let out = polarlab(&["--config", s(&cfg), "--out", s(&nnd), "ber", "/no/such/checkpoint.json"]);
    assert_eq!(out.status.code(), Some(3));
}

use std::path::Path;
use std::process::{Command, Output};

fn echomsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echomsa"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"
seed = 3
[model]
model_dim = 8
num_heads = 2
[data]
num_samples = 3
[train]
steps = 4
log_every = 0
"#;

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(echomsa(&["--help"]).status.code(), Some(0));
    let v = echomsa(&["--version"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(echomsa(&[]).status.code(), Some(1));
    assert_eq!(echomsa(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(echomsa(&["gradcheck", "--scope", "everything"]).status.code(), Some(1));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nmodel_dim = 8\nnum_heads = 3\n");
    let out = echomsa(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let missing = dir.path().join("absent.toml");
    let out = echomsa(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();
    let t = echomsa(&["train", "--config", &cfg, "--out", out]);
    assert_eq!(t.status.code(), Some(0), "{}", String::from_utf8_lossy(&t.stderr));
    for f in ["model.ckpt", "loss_trace.csv", "report.json", "config.toml"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let e = echomsa(&["eval", "--config", &cfg, "--out", out]);
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    assert!(String::from_utf8_lossy(&e.stdout).contains("exact match"));
}

#[test]
fn gradcheck_loss_scope_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = echomsa(&["gradcheck", "--scope", "loss", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("ok")).count(), 3);
    assert!(dir.path().join("gradcheck.json").exists());
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[bench]\nlengths = [8, 16]\nwindows = [4]\nkernels = [1]\nmodel_dim = 8\nnum_heads = 2\nrepeats = 1\n",
    );
    let out = echomsa(&["bench", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("mode,T,W,k,macs,seconds"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}

#[test]
fn diverging_training_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}[schedule]\nstage_rates = [1e300, 1e299, 1e298]\n");
    let cfg = write_config(dir.path(), &body);
    let out = echomsa(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn synth_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[data]\nnum_samples = 2\n");
    let out = echomsa(&["synth", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_otfs-sim"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn small(extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = ["--m", "32", "--n", "8", "--pilot-len", "4", "--nu-max-t", "0"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn args<'a>(verb: &'a str, out: &'a Path, rest: &'a [String]) -> Vec<&'a str> {
    let mut v = vec![verb, "--out", out.to_str().unwrap()];
    v.extend(rest.iter().map(String::as_str));
    v
}

#[test]
fn run_writes_metrics_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let rest = small(&["--trials", "8", "--seed", "11"]);
    let out = run(&args("run", dir.path(), &rest));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("metrics_M32_N8.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sweep_value,to_err_mean,to_err_var,cfo_mse_coarse,cfo_mse_fine,trials,failures"
    );
    assert!(lines.next().unwrap().ends_with(",8,0"));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 11"));
    assert!(manifest.contains("metrics_M32_N8.csv"));
}

#[test]
fn same_seed_same_numbers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let rest = small(&["--trials", "6", "--sweep", "snr", "--snr-list", "[0, 20]"]);
    for d in [&a, &b] {
        assert!(run(&args("sweep", d.path(), &rest)).status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read_to_string(d.path().join("metrics_M32_N8.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a).lines().count(), 3);
}

#[test]
fn snapshot_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let rest = small(&["--theta", "40", "--trial", "2"]);
    let out = run(&args("snapshot", dir.path(), &rest));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["p_d.csv", "p_t.csv", "cfo_cost.csv", "channel.csv", "summary.txt", "manifest.txt"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("theta_true = 40"));
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("loopback.toml");
    let rest = vec!["--config".to_string(), cfg.to_string_lossy().into_owned(), "--trials".into(), "5".into()];
    let out = run(&args("run", dir.path(), &rest));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("trials = 5"));
    assert!(manifest.contains("channel = \"unit\""));
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        otfs_core::sim::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn bad_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let no_axis = run(&args("sweep", dir.path(), &small(&[])));
    assert!(!no_axis.status.success());
    assert!(String::from_utf8_lossy(&no_axis.stderr).contains("sweep needs an axis"));
    let bad_value = run(&args("run", dir.path(), &small(&["--trials", "0"])));
    assert!(!bad_value.status.success());
    assert!(!run(&["frobnicate"]).status.success());
}

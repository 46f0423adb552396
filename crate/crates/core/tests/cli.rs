//! The `dualchain` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dualchain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualchain")).args(args).output().expect("binary runs")
}

fn small(out: &Path) -> Vec<String> {
    ["--n", "6", "--dt", "1e-3", "--t-max", "60", "--seed", "7", "--out", out.to_str().unwrap()]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn run_with(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run".to_string()];
    args.extend(small(out));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    dualchain(&refs)
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = run_with(&out, &["--k", "2", "--threshold", "0.99", "--trajectories", "64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "trajectories.csv", "summary.csv", "histogram.csv", "tbar.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let traj = read(out.join("trajectories.csv"));
    let mut lines = traj.lines();
    assert_eq!(lines.next(), Some("cell_k,cell_threshold,index,arrival_time,censored,steps,seed"));
    assert_eq!(lines.count(), 64);
    let manifest: serde_json::Value = serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["n"], 6);
    assert_eq!(manifest["dt"], 1e-3);
    assert_eq!(manifest["eta"], 1.0);
    assert_eq!(manifest["j"], 1.0);
}

#[test]
fn identical_invocations_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = ["--k", "1.5", "--threshold", "0.9", "--trajectories", "40"];
    assert!(run_with(&a, &args).status.success());
    assert!(run_with(&b, &[&args[..], &["--workers", "3"]].concat()).status.success());
    for f in ["trajectories.csv", "summary.csv", "histogram.csv", "tbar.csv"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_with(&a, &["--k", "3", "--threshold", "0.9,0.99", "--trajectories", "30"]).status.success());
    let manifest = a.join("manifest.json");
    let o = dualchain(&["run", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(a.join("trajectories.csv")), read(b.join("trajectories.csv")));
    assert_eq!(read(a.join("summary.csv")), read(b.join("summary.csv")));
    // Two cells: per-cell subdirectories.
    assert!(b.join("k3_thr0.99").join("histogram.csv").exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("o");
    fs::write(&cfg, r#"{"n": 5, "k": [2], "threshold": [0.9], "trajectories": 8, "dt": 0.001, "t-max": 30}"#).unwrap();
    let o = dualchain(&["run", "--config", cfg.to_str().unwrap(), "--trajectories", "12", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["n"], 5);
    assert_eq!(manifest["trajectories"], 12);
    assert_eq!(read(out.join("trajectories.csv")).lines().count(), 13);
}

#[test]
fn invalid_threshold_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(&dir.path().join("x"), &["--threshold", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("threshold"));
    assert!(!dir.path().join("x").join("trajectories.csv").exists());
}

#[test]
fn empty_k_list_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"k": []}"#).unwrap();
    let o = dualchain(&["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"t_max": 5}"#).unwrap();
    let o = dualchain(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = dualchain(&[
        "sweep", "--n", "5", "--dt", "1e-3", "--t-max", "20", "--trajectories", "8", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = read(out.join("sweep.csv"));
    assert_eq!(sweep.lines().count(), 16);
    assert_eq!(sweep.lines().next(), Some("threshold,k,mean,std_error,n,censored_fraction"));
}

#[test]
fn resumed_sweep_matches_uninterrupted_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("sweep.ckpt");
    let sweep = |out: &Path, checkpoint: bool| {
        let mut args = vec!["sweep".to_string()];
        args.extend(small(out));
        args.extend(["--k", "1,4", "--threshold", "0.9,0.99", "--trajectories", "20"].map(String::from));
        if checkpoint {
            args.extend(["--checkpoint".to_string(), ckpt.to_str().unwrap().to_string()]);
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert!(dualchain(&refs).status.success());
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    sweep(&a, false);
    sweep(&b, true);
    let text = read(&ckpt);
    let keep: Vec<&str> = text.lines().take(12).collect();
    fs::write(&ckpt, keep.join("\n")).unwrap();
    fs::remove_dir_all(&b).unwrap();
    sweep(&b, true);
    for f in ["trajectories.csv", "summary.csv", "sweep.csv"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
}

#[test]
fn trace_stride_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    assert!(run_with(&out, &["--k", "2", "--threshold", "0.9", "--trajectories", "3", "--trace-stride", "100"]).status.success());
    let traces = read(out.join("traces.csv"));
    assert_eq!(traces.lines().next(), Some("cell_k,cell_threshold,index,t,rho_nn,expect_x,dr"));
    assert!(traces.lines().count() > 3);
}

#[test]
fn two_site_baseline_arrives_at_quarter_period() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = dualchain(&["baseline", "--n", "2", "--schedule", "0.7854", "--trajectories", "50", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(out.join("baseline.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,arrival_time,rounds"));
    for (i, line) in lines.enumerate() {
        assert_eq!(line, format!("{i},0.7854,1"));
    }
}

#[test]
fn bad_schedules_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(dualchain(&["baseline", "--schedule", "2,1", "--out", out]).status.code(), Some(2));
    assert_eq!(dualchain(&["baseline", "--out", out]).status.code(), Some(2));
    assert_eq!(dualchain(&["baseline", "--greedy", "--schedule", "1", "--out", out]).status.code(), Some(2));
}

#[test]
fn corrupted_model_fails_the_restriction_check() {
    let o = dualchain(&["check", "--quick", "--corrupt-offdiag"]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL full-space restriction"), "{stdout}");
    assert!(stdout.contains("failed:"));
}

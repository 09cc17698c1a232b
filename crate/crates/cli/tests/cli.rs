//! End-to-end checks of the command-line driver: exit codes, artifact
//! headers, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_brownlab"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("brownlab-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn edge_scan_finds_the_ginibre_edge() {
    let out = tmp("edge");
    let status = bin()
        .args(["edge-scan", "--model", "zero", "--N", "512", "--ray", "1+0i"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let edge: serde_json::Value = serde_json::from_str(&read(&out, "edge.json")).unwrap();
    assert_eq!(edge["class"], "Sharp");
    let g = edge["gamma0"].as_array().unwrap();
    assert!((g[0].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(g[1].as_f64().unwrap().abs() < 1e-6);
    let summary: serde_json::Value = serde_json::from_str(&read(&out, "summary.json")).unwrap();
    assert_eq!(summary["pass"], true);
    assert!(summary["config_hash"].as_str().unwrap().len() == 16);
}

#[test]
fn cluster_count_is_exact_and_reproducible() {
    let run = |out: &Path| {
        let status = bin()
            .args([
                "cluster-count",
                "--model",
                "twocluster",
                "--N",
                "64",
                "--trials",
                "25",
                "--seed",
                "7",
            ])
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    };
    let (a, b) = (tmp("cc-a"), tmp("cc-b"));
    run(&a);
    run(&b);
    let counts = read(&a, "counts.csv");
    assert!(counts.starts_with("# config_hash="), "header missing: {counts}");
    assert!(counts.contains("\n# seed=7\n"));
    for line in counts.lines().skip(3) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(&cols[1..], &["32", "32"], "unexpected counts row {line}");
    }
    // Byte-identical rerun (the summary differs only in wall time).
    assert_eq!(counts, read(&b, "counts.csv"));
    assert_eq!(read(&a, "clusters.json"), read(&b, "clusters.json"));
}

#[test]
fn exit_codes_separate_config_and_acceptance_failures() {
    // Unknown flag: clap usage error.
    let s = bin().args(["edge-scan", "--no-such-flag"]).output().unwrap();
    assert_eq!(s.status.code(), Some(2));
    // Structurally valid but empty trial set.
    let s = bin()
        .args(["mc-eigen", "--model", "zero", "--N", "16", "--trials", "0"])
        .arg("--out")
        .arg(tmp("bad"))
        .output()
        .unwrap();
    assert_eq!(s.status.code(), Some(2));
    // Missing model-spec file.
    let s = bin()
        .args(["edge-scan", "--model", "does-not-exist.json"])
        .arg("--out")
        .arg(tmp("bad2"))
        .output()
        .unwrap();
    assert_eq!(s.status.code(), Some(2));
}

#[test]
fn config_file_merges_under_flags() {
    let out = tmp("cfg");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = out.join("run.json");
    std::fs::write(&cfg, r#"{"note": "from-file"}"#).unwrap();
    let status = bin()
        .args(["edge-scan", "--model", "zero", "--N", "64"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let summary: serde_json::Value = serde_json::from_str(&read(&out, "summary.json")).unwrap();
    assert_eq!(summary["config"]["note"], "from-file");
    assert_eq!(summary["config"]["N"], 64);
}

#[test]
fn flow_check_passes_the_trace_law() {
    let out = tmp("flow");
    let status = bin()
        .args(["flow-check", "--model", "zero", "--N", "32", "--eta0", "1", "--t-max", "2"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let traj = read(&out, "trajectory.csv");
    assert!(traj.lines().count() > 10);
}

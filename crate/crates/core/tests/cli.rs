use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gpsmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpsmatch"))
        .args(args)
        .output()
        .unwrap()
}

fn write_cohort(path: &Path) {
    let cfg = gpsmatch::simgen::SimConfig {
        n1: 80,
        b: 0.5,
        ..Default::default()
    };
    let c = gpsmatch::simgen::sample_cohort(&cfg, 3).unwrap();
    let y: Vec<f64> = (0..c.n())
        .map(|i| c.covariates()[(i, 0)] + c.treatment(i) as f64)
        .collect();
    gpsmatch::data::save_cohort(&c.with_outcomes(y).unwrap(), path).unwrap();
}

#[test]
fn grid_counts() {
    let out = gpsmatch(&["grid", "--which", "z35", "--count"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "10368");
    let out = gpsmatch(&["grid", "--which", "z10", "--count"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "36");
    let out = gpsmatch(&["grid", "--which", "z10"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 37);
}

#[test]
fn match_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort.csv");
    write_cohort(&cohort);
    let out_dir = dir.path().join("out");
    let out = gpsmatch(&[
        "match",
        cohort.to_str().unwrap(),
        "--algorithm",
        "GPSnc",
        "--reference",
        "auto",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["matched.csv", "balance.csv", "estimates.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let balance = fs::read_to_string(out_dir.join("balance.csv")).unwrap();
    assert!(
        balance.trim_end().ends_with(",1.0000"),
        "prop matched must be 1:\n{balance}"
    );

    // re-weighting the cohort through `balance` gives the same report
    let again = gpsmatch(&[
        "balance",
        "--cohort",
        cohort.to_str().unwrap(),
        "--matched",
        out_dir.join("matched.csv").to_str().unwrap(),
        "--manifest",
        out_dir.join("matched_manifest.txt").to_str().unwrap(),
    ]);
    assert!(again.status.success());
    assert_eq!(String::from_utf8_lossy(&again.stdout), balance);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.txt");
    fs::write(&manifest, "replications=0\n").unwrap();
    assert_eq!(
        gpsmatch(&["simulate", manifest.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    fs::write(&manifest, "replications=2\n").unwrap();
    let out = gpsmatch(&[
        "simulate",
        manifest.to_str().unwrap(),
        "--replications",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(gpsmatch(&["bogus"]).status.code(), Some(2));
    assert_eq!(gpsmatch(&["grid", "--nope"]).status.code(), Some(2));
    assert_eq!(
        gpsmatch(&["match", "x.csv", "--algorithm", "XYZ"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn job_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = gpsmatch(&["match", missing.to_str().unwrap(), "--algorithm", "VM"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn simulate_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.txt");
    fs::write(
        &manifest,
        "n1=50\nb=0.5\nalgorithms=VM,GPSnc\nreplications=2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("sim");
    let out = gpsmatch(&[
        "simulate",
        manifest.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let raw = fs::read_to_string(out_dir.join("raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 2 * 2);
    assert!(raw.starts_with("z,n1,gamma,b,lambda,s2,s3,eta,df,p,algorithm,replication,status,maxmax2sb,meanmax2sb,prop_matched"));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with(
        "z,p,b,algorithm,median_maxmax2sb,median_meanmax2sb,median_prop_matched,n_ok"
    ));
    assert!(out_dir.join("summary_long.csv").exists());
}

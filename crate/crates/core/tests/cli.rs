use std::process::{Command, Output};

use orsplit::bench::{benchmark, CSV_COLUMNS};

fn orsplit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orsplit")).args(args).output().unwrap()
}

fn queens() -> String {
    benchmark("queens8").unwrap().path().to_string_lossy().into_owned()
}

#[test]
fn run_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let p = queens();
    let out = orsplit(&[
        "run",
        "--program",
        &p,
        "--query",
        "queens(6, Qs)",
        "--agents",
        "3",
        "--incremental",
        "--ledger",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("Qs = [")).count(), 4);
    assert!(stdout.contains("ledger: every alternative ran once"));
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(lines.count(), 1);
}

#[test]
fn oracle_prints_counts() {
    let out = orsplit(&["oracle", "--program", &queens(), "--query", "queens(4, Qs)"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("2 solutions"));
}

#[test]
fn bad_input_exits_with_two() {
    let out = orsplit(&["oracle", "--program", "/nonexistent.pl", "--query", "p"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pl");
    std::fs::write(&bad, "p(.").unwrap();
    let out = orsplit(&["run", "--program", bad.to_str().unwrap(), "--query", "p(X)"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_benchmark_fails_the_batch() {
    let out = orsplit(&["batch", "--benchmarks", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn batch_reports_each_configuration() {
    let out = orsplit(&[
        "batch",
        "--benchmarks",
        "queens8",
        "--agents",
        "1,2",
        "--strategies",
        "horizontal",
        "--incremental",
        "true",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.ends_with("pass")).count(), 2, "{stdout}");
}

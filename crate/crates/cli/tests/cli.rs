use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_state-auction"))
        .args(args)
        .env_remove("STATE_AUCTION_ENDPOINT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn empty_market_is_a_validation_error() {
    let out = tempfile::tempdir().unwrap();
    let o = cli(&["clear", "--bids", &fixture("empty_market.json"), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn missing_input_file() {
    let out = tempfile::tempdir().unwrap();
    let o = cli(&["partition", "--scenarios", "no/such.csv", "--states", "2", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unreachable_endpoint_fails_cleanly() {
    let out = tempfile::tempdir().unwrap();
    let o = cli(&[
        "ingest",
        "--location",
        "54.0,6.5",
        "--target-time",
        "2025-01-01T12:00:00Z",
        "--endpoint",
        "http://127.0.0.1:9/v1/ensemble",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn too_large_for_the_exact_solver() {
    let out = tempfile::tempdir().unwrap();
    let o = cli(&[
        "partition",
        "--scenarios",
        &fixture("north_sea_39.csv"),
        "--states",
        "2",
        "--solver",
        "exact",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_reads_back_both_kinds_of_output() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();
    let o = cli(&["partition", "--scenarios", &fixture("north_sea_39.csv"), "--states", "3", "--out", dir]);
    assert!(o.status.success(), "{o:?}");
    let partition = out.path().join("partition_S3.json");
    let text = stdout(&cli(&["report", "--partition", partition.to_str().unwrap()]));
    assert_eq!(text, fs::read_to_string(out.path().join("partition_S3.txt")).unwrap());

    let o = cli(&["clear", "--bids", &fixture("thermal_expected.json"), "--out", dir]);
    assert!(o.status.success(), "{o:?}");
    let result = out.path().join("clearing_result.json");
    let o = cli(&["report", "--result", result.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("thermal"));

    // a clearing result is not a partition
    let o = cli(&["report", "--partition", result.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ingest_copies_the_scenarios_verbatim() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let o = cli(&["ingest", "--scenarios", &fixture("north_sea_39.csv"), "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success(), "{o:?}");
    }
    let first = fs::read(a.path().join("scenarios.csv")).unwrap();
    assert_eq!(first, fs::read(b.path().join("scenarios.csv")).unwrap());
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 40);
}

#[test]
fn unknown_solver_is_rejected_by_the_parser() {
    let o = cli(&["partition", "--scenarios", "x.csv", "--states", "2", "--solver", "annealing", "--out", "."]);
    assert!(!o.status.success());
}

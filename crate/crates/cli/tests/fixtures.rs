//! Every fixture reproduces its committed output. Set `AWSENS_BLESS=1` to
//! rewrite the expected files.

mod common;

use common::{expected_path, load_cases, numeric_distance, run_case};

#[test]
fn fixtures_reproduce_expected_outputs() {
    let bless = std::env::var_os("AWSENS_BLESS").is_some();
    let mut failures = Vec::new();
    for case in load_cases() {
        let got = run_case(&case, 1);
        assert_eq!(got.exit, Some(case.exit), "{}: exit code", case.name);
        let path = expected_path(&case.name);
        if bless {
            std::fs::write(&path, &got.stdout).unwrap();
            continue;
        }
        let expected =
            std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        if got.stdout != expected {
            failures.push(case.name.clone());
        }
    }
    assert!(failures.is_empty(), "outputs differ: {failures:?}");
}

#[test]
fn thread_count_does_not_change_results() {
    for case in load_cases() {
        let one = run_case(&case, 1);
        let many = run_case(&case, 4);
        assert_eq!(one.exit, many.exit, "{}", case.name);
        let d = numeric_distance(&one.stdout, &many.stdout).unwrap_or(f64::INFINITY);
        assert!(d <= 1e-12, "{}: outputs differ by {d}", case.name);
    }
}

#[test]
fn usage_errors_exit_64() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_awsens"))
        .arg("no-such-command")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));
}

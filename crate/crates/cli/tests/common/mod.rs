#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn bars_csv() -> PathBuf {
    fixtures().join("bars.csv")
}

pub const TRAIN_END: &str = "2021-02-19";
pub const TEST_START: &str = "2021-02-22";
pub const TEST_END: &str = "2021-05-21";
pub const PREDICT_DATE: &str = "2021-04-01";
pub const PREDICT_OPEN: &str = "104.5";

/// Runs the CLI in-process; returns (exit code, stdout, stderr).
pub fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("stockhmm").chain(args.iter().copied());
    let code = stockhmm_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn train_fixture(model: &Path) -> (i32, String, String) {
    run(&[
        "train",
        bars_csv().to_str().unwrap(),
        "--train-end",
        TRAIN_END,
        "--states",
        "2",
        "--mixtures",
        "2",
        "--bins",
        "10,4,4",
        "--seed",
        "0",
        "--out",
        model.to_str().unwrap(),
    ])
}

pub fn backtest_fixture(model: &Path, dir: &Path) -> (i32, String, String) {
    run(&[
        "backtest",
        model.to_str().unwrap(),
        bars_csv().to_str().unwrap(),
        "--test-start",
        TEST_START,
        "--test-end",
        TEST_END,
        "--report-dir",
        dir.to_str().unwrap(),
    ])
}

pub fn predict_fixture(model: &Path, format: &str) -> (i32, String, String) {
    run(&[
        "predict",
        model.to_str().unwrap(),
        bars_csv().to_str().unwrap(),
        "--date",
        PREDICT_DATE,
        "--open",
        PREDICT_OPEN,
        "--format",
        format,
    ])
}

/// Compares against `tests/fixtures/golden/<name>`; with `UPDATE_GOLDEN`
/// set the file is rewritten instead.
pub fn golden_matches(name: &str, actual: &str) -> Result<(), String> {
    let path = fixtures().join("golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path)
        .map_err(|e| format!("{}: {e} (run with UPDATE_GOLDEN=1 to create it)", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        let line = expected
            .lines()
            .zip(actual.lines())
            .position(|(a, b)| a != b)
            .map_or_else(|| "length differs".to_string(), |i| format!("first difference at line {}", i + 1));
        Err(format!("{name} differs from golden copy: {line}"))
    }
}

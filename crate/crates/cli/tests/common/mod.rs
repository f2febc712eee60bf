//! Runs the CLI fixture suite listed in `fixtures/cases.json`.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Case {
    pub name: String,
    pub args: Vec<String>,
    #[serde(default)]
    pub exit: i32,
}

#[derive(Debug)]
pub struct Outcome {
    pub name: String,
    pub stdout: String,
    pub exit: Option<i32>,
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn expected_path(name: &str) -> PathBuf {
    fixtures_dir().join("expected").join(format!("{name}.out"))
}

pub fn load_cases() -> Vec<Case> {
    let text =
        std::fs::read_to_string(fixtures_dir().join("cases.json")).expect("fixtures/cases.json");
    serde_json::from_str(&text).expect("valid case list")
}

pub fn run_case(case: &Case, threads: usize) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_awsens"))
        .args(&case.args)
        .current_dir(fixtures_dir())
        .env("AWSENS_THREADS", threads.to_string())
        .output()
        .expect("awsens runs");
    Outcome {
        name: case.name.clone(),
        stdout: String::from_utf8(out.stdout).expect("utf-8 output"),
        exit: out.status.code(),
    }
}

/// Largest relative difference between numeric tokens, or `None` if the
/// non-numeric structure differs.
pub fn numeric_distance(a: &str, b: &str) -> Option<f64> {
    let split = |s: &str| -> Vec<String> {
        s.split(|c: char| c.is_whitespace() || ",:[]{}\"".contains(c))
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect()
    };
    let (ta, tb) = (split(a), split(b));
    if ta.len() != tb.len() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (x, y) in ta.iter().zip(&tb) {
        match (x.parse::<f64>(), y.parse::<f64>()) {
            (Ok(u), Ok(v)) if u.is_nan() && v.is_nan() => {}
            (Ok(u), Ok(v)) => worst = worst.max((u - v).abs() / u.abs().max(1.0)),
            _ if x == y => {}
            _ => return None,
        }
    }
    Some(worst)
}

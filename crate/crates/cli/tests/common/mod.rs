#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use apiguard_core::report::FaultReport;
use apiguard_fixtures::{Fixture, FixtureKind};

pub const BIN: &str = env!("CARGO_BIN_EXE_apiguard");

pub fn apiguard(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

/// Writes the fixture's schema and auth config into `dir`.
pub fn assets(kind: FixtureKind, dir: &Path) -> (PathBuf, PathBuf) {
    let spec = kind.spec();
    std::fs::create_dir_all(dir).unwrap();
    let schema = dir.join(format!("{}.json", spec.name));
    let auth = dir.join(format!("{}.yaml", spec.name));
    std::fs::write(&schema, spec.schema).unwrap();
    std::fs::write(&auth, spec.auth).unwrap();
    (schema, auth)
}

pub struct FuzzRun {
    pub exit: i32,
    pub out_dir: PathBuf,
    pub report: Option<FaultReport>,
    pub stderr: String,
}

impl FuzzRun {
    pub fn codes(&self) -> Vec<u16> {
        self.report
            .iter()
            .flat_map(|r| r.faults.iter().map(|f| f.code.code()))
            .collect()
    }

    pub fn plan(&self) -> PathBuf {
        self.out_dir.join("json-plan").join("plan.json")
    }
}

pub fn fuzz(fx: &Fixture, dir: &Path, seed: u64, extra: &[&str]) -> FuzzRun {
    let (schema, auth) = assets(fx.spec().kind, &dir.join("assets"));
    let out_dir = dir.join(format!("out-{seed}"));
    let seed = seed.to_string();
    let base = fx.base_url();
    let mut args = vec![
        "fuzz",
        "--schema",
        schema.to_str().unwrap(),
        "--base-url",
        &base,
        "--auth",
        auth.to_str().unwrap(),
        "--seed",
        &seed,
        "--out-dir",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let out = apiguard(&args);
    let report = std::fs::read_to_string(out_dir.join("report.json"))
        .ok()
        .map(|t| serde_json::from_str(&t).expect("report parses"));
    FuzzRun {
        exit: code(&out),
        out_dir,
        report,
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn replay(plan: &Path, base_url: &str) -> Output {
    apiguard(&["replay", plan.to_str().unwrap(), "--base-url", base_url])
}

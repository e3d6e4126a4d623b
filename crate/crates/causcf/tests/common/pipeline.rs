//! Drives the `causcf` binary through the whole pipeline.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_causcf");

pub const STAGES: [&str; 5] = ["synth", "train", "estimate", "rdd", "evaluate"];

pub fn causcf(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("CAUSCF_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(stage: &str, out: Output) -> Result<(), String> {
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{stage} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Stage-specific file flags pointing into `dir`.
fn files(stage: &str, dir: &Path) -> Vec<String> {
    let mut v = vec!["--out-dir".to_string(), s(dir)];
    if stage != "synth" {
        v.extend(["--input".into(), s(&dir.join("log.csv"))]);
    }
    if stage == "estimate" || stage == "evaluate" {
        v.extend(["--checkpoint".into(), s(&dir.join("checkpoint.json"))]);
    }
    if stage == "evaluate" {
        v.extend(["--truth".into(), s(&dir.join("truth.csv"))]);
    }
    v
}

/// A small confounded world that still admits RDD cutoffs on both splits.
pub fn run_pipeline(dir: &Path) -> Result<(), String> {
    let world = [
        "--seed", "7", "--users", "150", "--items", "50", "--max-position", "20", "--rho", "0.2", "--gamma", "3",
        "--sessions", "30000", "--pair-truth",
    ];
    let model = ["--k", "4", "--epochs", "10", "--lr", "0.05"];
    let split = ["--split-day", "6"];
    let rdd = ["--min-samples", "5"];
    for stage in STAGES {
        let mut args: Vec<String> = vec![stage.into()];
        args.extend(files(stage, dir));
        let extra: &[&str] = match stage {
            "synth" => &world,
            "train" => &[&model[..], &split[..]].concat(),
            "rdd" => &rdd,
            "evaluate" => &[&split[..], &rdd[..]].concat(),
            _ => &[],
        };
        args.extend(extra.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(stage, causcf(&refs))?;
    }
    Ok(())
}

/// Reruns every stage of `from` using only its manifests, writing into `to`.
pub fn replay(from: &Path, to: &Path) -> Result<(), String> {
    for stage in STAGES {
        let manifest = from.join(format!("{stage}.manifest.json"));
        let mut args = vec![stage.to_string(), "--config".into(), s(&manifest)];
        args.extend(files(stage, to));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(stage, causcf(&refs))?;
    }
    Ok(())
}

/// Output files that must match between runs.
pub fn artifacts(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv") || p.file_name().is_some_and(|n| n == "checkpoint.json")
        })
        .collect();
    v.sort();
    v
}

/// Names of artifacts whose bytes differ, or that exist on one side only.
pub fn differing(a: &Path, b: &Path) -> Vec<String> {
    let names = |d: &Path| -> Vec<String> {
        artifacts(d).iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect()
    };
    let (na, nb) = (names(a), names(b));
    let mut out: Vec<String> = na.iter().filter(|n| !nb.contains(n)).cloned().collect();
    out.extend(nb.iter().filter(|n| !na.contains(n)).cloned());
    for n in na.iter().filter(|n| nb.contains(n)) {
        if std::fs::read(a.join(n)).unwrap() != std::fs::read(b.join(n)).unwrap() {
            out.push(n.clone());
        }
    }
    out
}

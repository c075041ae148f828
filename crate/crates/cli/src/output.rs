//! CSV and JSON writers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use doubleq_core::sim::{MaxBiasCurve, MseCurve};
use doubleq_core::suites::{TrialOutcome, Verdict};

pub const CURVE_HEADER: [&str; 8] = [
    "algorithm",
    "n",
    "mse_mean",
    "mse_stderr",
    "n_times_mse",
    "paths",
    "diverged_paths",
    "seed_base",
];
pub const MAX_BIAS_HEADER: [&str; 5] = ["algorithm", "episode", "p_left", "runs", "seed_base"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub algorithm: String,
    pub n: u64,
    pub mse_mean: f64,
    pub mse_stderr: f64,
    pub n_times_mse: f64,
    pub paths: usize,
    pub diverged_paths: usize,
    pub seed_base: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxBiasRow {
    pub algorithm: String,
    pub episode: usize,
    pub p_left: f64,
    pub runs: usize,
    pub seed_base: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub suite: String,
    pub seed: u64,
    pub verdict: String,
    pub metric: String,
    pub value: f64,
}

pub fn curve_rows(curve: &MseCurve) -> Vec<CurveRow> {
    curve
        .checkpoints
        .iter()
        .map(|c| CurveRow {
            algorithm: curve.algorithm.name().into(),
            n: c.n,
            mse_mean: c.mse_mean,
            mse_stderr: c.mse_stderr,
            n_times_mse: c.n_times_mse,
            paths: curve.paths,
            diverged_paths: curve.diverged_paths,
            seed_base: curve.seed_base,
        })
        .collect()
}

pub fn max_bias_rows(curve: &MaxBiasCurve) -> Vec<MaxBiasRow> {
    curve
        .p_left
        .iter()
        .enumerate()
        .map(|(episode, &p_left)| MaxBiasRow {
            algorithm: curve.algorithm.name().into(),
            episode,
            p_left,
            runs: curve.runs,
            seed_base: curve.seed_base,
        })
        .collect()
}

pub fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Skip => "skip",
    }
}

pub fn trial_rows(suite: &str, outcomes: &[TrialOutcome]) -> Vec<TrialRow> {
    let mut rows = Vec::new();
    for t in outcomes {
        for &(metric, value) in &t.metrics {
            rows.push(TrialRow {
                suite: suite.into(),
                seed: t.seed,
                verdict: verdict_name(t.verdict).into(),
                metric: metric.into(),
                value,
            });
        }
    }
    rows
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Records the resolved config, the code version and the digest of every
/// file written, next to the outputs.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    config: &crate::config::ExperimentConfig,
    threads: Option<usize>,
    files: &[PathBuf],
    extra: serde_json::Value,
) -> Result<()> {
    let mut digests = serde_json::Map::new();
    for f in files {
        let name = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        digests.insert(name, sha256_file(f)?.into());
    }
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(config)?,
        "config_toml": config.to_toml()?,
        "threads": threads,
        "timestamp_unix": timestamp,
        "files": digests,
        "details": extra,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

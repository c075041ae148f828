use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use doubleq_core::sim::{
    aggregate, aggregate_max_bias, max_bias_run, simulate_path, Algorithm, Init, MaxBiasConfig,
    MseCurve, RunConfig, SimModel, StepSchedule,
};
use doubleq_core::suites::{self, Suite, TrialOutcome, Verdict};
use doubleq_core::{AmseReport, AnalyzedModel, Error, RandomModelSpec};

use crate::config::{Environment, ExperimentConfig};
use crate::model::{self, Built};
use crate::output::{self, CurveRow, MaxBiasRow};

/// A precondition the analyzer refused to proceed without.
#[derive(Debug)]
pub struct Refusal {
    pub kind: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Refusal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "refused ({}): {}", self.kind, self.detail)
    }
}

impl std::error::Error for Refusal {}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Invalid(_) => "Invalid",
        Error::DimensionMismatch(_) => "DimensionMismatch",
        Error::NotErgodic(_) => "NotErgodic",
        Error::MaxIterExceeded { .. } => "MaxIterExceeded",
        Error::SingularProjection { .. } => "SingularProjection",
        Error::PolicyCycle { .. } => "PolicyCycle",
        Error::NonUniqueOptimal { .. } => "NonUniqueOptimal",
        Error::NotHurwitz { .. } => "NotHurwitz",
        Error::SlowMixing { .. } => "SlowMixing",
        Error::StepSizeTooSmall { .. } => "StepSizeTooSmall",
        Error::Diverged { .. } => "Diverged",
    }
}

fn refusal(e: Error) -> Refusal {
    Refusal {
        kind: error_kind(&e),
        detail: e.to_string(),
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Simulates all paths in parallel and aggregates them in path order, so the
/// curve does not depend on the number of workers.
pub fn run_paths(sim: &SimModel, cfg: &RunConfig) -> Result<MseCurve> {
    cfg.validate(sim)?;
    let results: Vec<_> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| simulate_path(sim, cfg, p))
        .collect();
    Ok(aggregate(cfg, &results))
}

fn tabular(env: &Environment) -> Result<AnalyzedModel> {
    match model::build(env)? {
        Built::Tabular(parts) => Ok(parts.analyze()?),
        Built::MaxBias(_) => bail!("the max-bias chain has no linear model to analyze"),
    }
}

fn report_json(m: &AnalyzedModel, r: &AmseReport, env: &Environment) -> serde_json::Value {
    let c = &r.checks;
    json!({
        "environment": serde_json::to_value(env).unwrap_or_default(),
        "model_hash": model::model_hash(&m.mdp, &m.features, &m.policy),
        "dim": m.features.dim(),
        "g": r.g,
        "g0": r.g0,
        "omega": m.solution.gap_omega,
        "spectral_abscissa": m.lsa.abscissa,
        "noise_lags": m.lsa.lags,
        "theta_star": m.solution.theta_star.as_slice(),
        "pi_star": m.solution.pi_star.actions,
        "amse_q": r.amse_q,
        "amse_a": r.amse_a,
        "amse_avg": r.amse_avg,
        "gap": r.gap,
        "gap_trace_x": r.gap_trace_x,
        "c0_lower": r.c0_lower,
        "residuals": {
            "q": r.residual_q,
            "double": r.residual_d,
            "gap": r.residual_gap,
            "gap_limit": r.residual_gap_limit,
            "block_sum": r.residual_block_sum,
            "block_difference": r.residual_block_difference,
            "structure_deviation": r.structure_deviation,
        },
        "checks": {
            "block_structure": c.block_structure,
            "q_is_half_sum": c.q_is_half_sum,
            "trace_v_ge_c": c.trace_v_ge_c,
            "double_not_better": c.double_not_better,
            "average_matches": c.average_matches,
            "gap_lower_bound": c.gap_lower_bound,
            "gap_trace_identity": c.gap_trace_identity,
            "block_sum_equation": c.block_sum_equation,
            "block_difference_equation": c.block_difference_equation,
            "residuals": c.residuals,
        },
        "pass": c.all(),
    })
}

/// Flattens the scalar entries of the analysis JSON into `quantity,value`.
fn analysis_rows(v: &serde_json::Value) -> Vec<(String, String)> {
    let mut rows = Vec::new();
    let mut push = |prefix: &str, obj: &serde_json::Map<String, serde_json::Value>| {
        for (k, v) in obj {
            let name = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                serde_json::Value::Number(_) | serde_json::Value::Bool(_) => {
                    rows.push((name, v.to_string()))
                }
                serde_json::Value::String(s) => rows.push((name, s.clone())),
                _ => {}
            }
        }
    };
    if let Some(obj) = v.as_object() {
        push("", obj);
        for key in ["residuals", "checks"] {
            if let Some(inner) = obj.get(key).and_then(|x| x.as_object()) {
                push(key, inner);
            }
        }
    }
    rows
}

fn write_analysis(dir: &Path, value: &serde_json::Value) -> Result<Vec<PathBuf>> {
    let json_path = dir.join("analysis.json");
    output::write_json(&json_path, value)?;
    let csv_path = dir.join("analysis.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&csv_path)?;
    w.write_record(["quantity", "value"])?;
    for (k, v) in analysis_rows(value) {
        w.write_record([k, v])?;
    }
    w.flush()?;
    Ok(vec![json_path, csv_path])
}

fn write_refusal(dir: &Path, r: &Refusal, g: Option<f64>, g0: Option<f64>) -> Result<PathBuf> {
    let path = dir.join("refusal.json");
    output::write_json(
        &path,
        &json!({ "refusal": r.kind, "detail": r.detail, "g": g, "g0": g0 }),
    )?;
    Ok(path)
}

/// Exact analysis of the configured environment.
pub fn analyze(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<serde_json::Value> {
    let dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let m = match tabular(&cfg.environment) {
        Ok(m) => m,
        Err(e) => {
            return Err(match e.downcast::<Error>() {
                Ok(core) => {
                    let r = refusal(core);
                    write_refusal(&dir, &r, None, None)?;
                    r.into()
                }
                Err(e) => e,
            })
        }
    };
    let g = cfg.gain.resolve(m.lsa.g0);
    match m.report(g) {
        Ok(r) => {
            let value = report_json(&m, &r, &cfg.environment);
            let files = write_analysis(&dir, &value)?;
            output::write_manifest(&dir, "analyze", cfg, threads, &files, json!({}))?;
            Ok(value)
        }
        Err(e) => {
            let r = refusal(e);
            let f = write_refusal(&dir, &r, Some(g), Some(m.lsa.g0))?;
            output::write_manifest(
                &dir,
                "analyze",
                cfg,
                threads,
                &[f],
                json!({ "refusal": r.kind }),
            )?;
            Err(r.into())
        }
    }
}

pub struct SimulateSummary {
    pub files: Vec<PathBuf>,
    pub diverged_paths: usize,
}

pub fn simulate(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<SimulateSummary> {
    let dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let algorithms = cfg.simulation.algorithms()?;
    let env_name = cfg.environment.name();
    let mut files = Vec::new();
    let mut details = serde_json::Map::new();
    let mut diverged_paths = 0;

    match model::build(&cfg.environment)? {
        Built::MaxBias(env) => {
            let mb = MaxBiasConfig {
                episodes: cfg.maxbias.episodes,
                runs: cfg.maxbias.runs,
                seed_base: cfg.simulation.seed_base,
                epsilon: cfg.maxbias.epsilon,
                schedule: cfg.schedule.resolve(None)?,
                discount: cfg.maxbias.discount,
                step_counter: cfg.simulation.step_counter(),
            };
            for alg in algorithms {
                mb.validate(alg)?;
                let runs: Vec<Vec<bool>> = with_threads(threads, || {
                    (0..mb.runs as u64)
                        .into_par_iter()
                        .map(|r| max_bias_run(&env, alg, &mb, r))
                        .collect()
                })?;
                let curve = aggregate_max_bias(alg, &mb, &runs);
                let path = dir.join(format!("{env_name}_{}.csv", alg.name()));
                let rows: Vec<MaxBiasRow> = output::max_bias_rows(&curve);
                output::write_csv(&path, &rows)?;
                files.push(path);
            }
        }
        Built::Tabular(parts) => {
            let m = parts.analyze()?;
            let g = cfg.gain.resolve(m.lsa.g0);
            details.insert("g0".into(), m.lsa.g0.into());
            details.insert(
                "model_hash".into(),
                model::model_hash(&m.mdp, &m.features, &m.policy).into(),
            );
            let schedule: StepSchedule = cfg.schedule.resolve(Some(g))?;
            if cfg.schedule.needs_gain() {
                details.insert("g".into(), g.into());
            }
            if cfg.analysis {
                match m.report(g) {
                    Ok(r) => files.extend(write_analysis(
                        &dir,
                        &report_json(&m, &r, &cfg.environment),
                    )?),
                    Err(e) => {
                        details.insert("analysis_refusal".into(), error_kind(&e).into());
                    }
                }
            }
            let sim = SimModel::new(&m.mdp, &m.features, &m.policy, &m.solution)?;
            for alg in algorithms {
                let run = RunConfig {
                    algorithm: alg,
                    schedule,
                    n_steps: cfg.simulation.n_steps,
                    n_paths: cfg.simulation.n_paths,
                    seed_base: cfg.simulation.seed_base,
                    init: cfg.simulation.init(),
                    start_state: cfg.simulation.start_state,
                    step_counter: cfg.simulation.step_counter(),
                };
                let curve = with_threads(threads, || run_paths(&sim, &run))??;
                diverged_paths += curve.diverged_paths;
                let path = dir.join(format!("{env_name}_{}.csv", alg.name()));
                let rows: Vec<CurveRow> = output::curve_rows(&curve);
                output::write_csv(&path, &rows)?;
                files.push(path);
            }
        }
    }
    details.insert("diverged_paths".into(), diverged_paths.into());
    output::write_manifest(&dir, "simulate", cfg, threads, &files, details.into())?;
    Ok(SimulateSummary {
        files,
        diverged_paths,
    })
}

/// Linearized Q and averaged Double Q on a seeded 3-state, 2-action model
/// with `alpha_n = g / (n + ceil(g))`: `n E|theta_n - theta*|^2` at the last
/// step against `trace(Sigma_Q)`, within three standard errors.
pub fn bridge_trial(seed: u64, factor: f64, n_steps: u64, n_paths: usize) -> Result<TrialOutcome> {
    let spec = RandomModelSpec {
        n_states: 3,
        n_actions: 2,
        ..Default::default()
    };
    let m = doubleq_core::random_model(&spec, seed)?.model;
    let g = factor * m.lsa.g0;
    let target = m.report(g)?.amse_q;
    let sim = SimModel::new(&m.mdp, &m.features, &m.policy, &m.solution)?;
    let mut metrics = vec![("g", g), ("g0", m.lsa.g0), ("amse_q", target)];
    let mut ok = true;
    for (alg, key, z_key) in [
        (Algorithm::QLinearized, "q_linearized", "q_linearized_z"),
        (
            Algorithm::DQAvgTwiceLinearized,
            "dq_avg_twice_linearized",
            "dq_avg_twice_linearized_z",
        ),
    ] {
        let cfg = RunConfig {
            algorithm: alg,
            schedule: StepSchedule::GOverN {
                g,
                offset: g.ceil(),
            },
            n_steps,
            n_paths,
            seed_base: seed,
            init: Init::Zero,
            start_state: 0,
            step_counter: doubleq_core::sim::StepCounter::Global,
        };
        let curve = run_paths(&sim, &cfg)?;
        let last = curve.last().ok_or_else(|| anyhow!("empty curve"))?;
        let z = (last.n_times_mse - target) / last.n_times_stderr;
        ok &= curve.diverged_paths == 0 && z.abs() <= 3.0;
        metrics.push((key, last.n_times_mse));
        metrics.push((z_key, z));
    }
    Ok(TrialOutcome {
        seed,
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        metrics,
    })
}

pub fn run_trial(cfg: &ExperimentConfig, suite: Suite, seed: u64) -> Result<TrialOutcome> {
    Ok(match suite {
        Suite::Theorem2 => suites::theorem2_trial(seed)?,
        Suite::Theorem3 => suites::theorem3_trial(seed)?,
        Suite::Lemma3 => suites::lemma3_trial(seed)?,
        Suite::Lyapunov => suites::lyapunov_trial(seed)?,
        Suite::Bridge => bridge_trial(
            seed,
            cfg.gain.factor,
            cfg.verify.bridge_steps,
            cfg.verify.bridge_paths,
        )?,
    })
}

pub struct VerifySummary {
    pub outcomes: Vec<TrialOutcome>,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
}

impl VerifySummary {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

/// Runs `verify.trials` trials with seeds `verify.seed + i`. A trial that
/// errors counts as a failure.
pub fn verify(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<VerifySummary> {
    let suite = cfg.verify.suite()?;
    let dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let seeds: Vec<u64> = (0..cfg.verify.trials as u64)
        .map(|i| cfg.verify.seed + i)
        .collect();
    let outcomes: Vec<TrialOutcome> = with_threads(threads, || {
        seeds
            .par_iter()
            .map(|&seed| {
                run_trial(cfg, suite, seed).unwrap_or_else(|e| {
                    eprintln!("{} seed={seed} error: {e:#}", suite.name());
                    TrialOutcome {
                        seed,
                        verdict: Verdict::Fail,
                        metrics: Vec::new(),
                    }
                })
            })
            .collect()
    })?;
    let count = |v| outcomes.iter().filter(|t| t.verdict == v).count();
    let summary = VerifySummary {
        passed: count(Verdict::Pass),
        failed: count(Verdict::Fail),
        skipped: count(Verdict::Skip),
        outcomes,
    };
    let path = dir.join(format!("verify_{}.csv", suite.name()));
    output::write_csv(&path, &output::trial_rows(suite.name(), &summary.outcomes))?;
    output::write_manifest(
        &dir,
        "verify",
        cfg,
        threads,
        &[path],
        json!({ "suite": suite.name(), "passed": summary.passed, "failed": summary.failed, "skipped": summary.skipped }),
    )?;
    Ok(summary)
}

#[derive(Debug, serde::Serialize)]
struct LongRow<'a> {
    run: &'a str,
    file: &'a str,
    algorithm: &'a str,
    axis: &'a str,
    index: u64,
    metric: &'a str,
    value: f64,
}

/// Merges curve and max-bias CSVs of several run directories into one
/// long-format table. Other CSVs are skipped.
pub fn report(inputs: &[PathBuf], out: &Path) -> Result<usize> {
    if inputs.is_empty() {
        bail!("report needs at least one run directory");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let target = out.join("report.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&target)?;
    let mut rows = 0;
    for dir in inputs {
        let run = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv") && p != &target)
            .collect();
        files.sort();
        for path in files {
            let file = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut r = csv::Reader::from_path(&path)?;
            let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
            if header == output::CURVE_HEADER {
                for rec in r.deserialize::<CurveRow>() {
                    let c = rec.with_context(|| format!("reading {}", path.display()))?;
                    for (metric, value) in [
                        ("mse_mean", c.mse_mean),
                        ("mse_stderr", c.mse_stderr),
                        ("n_times_mse", c.n_times_mse),
                        ("paths", c.paths as f64),
                        ("diverged_paths", c.diverged_paths as f64),
                    ] {
                        let row = LongRow {
                            run: &run,
                            file: &file,
                            algorithm: &c.algorithm,
                            axis: "n",
                            index: c.n,
                            metric,
                            value,
                        };
                        w.serialize(row)?;
                        rows += 1;
                    }
                }
            } else if header == output::MAX_BIAS_HEADER {
                for rec in r.deserialize::<MaxBiasRow>() {
                    let c = rec.with_context(|| format!("reading {}", path.display()))?;
                    for (metric, value) in [("p_left", c.p_left), ("runs", c.runs as f64)] {
                        let row = LongRow {
                            run: &run,
                            file: &file,
                            algorithm: &c.algorithm,
                            axis: "episode",
                            index: c.episode as u64,
                            metric,
                            value,
                        };
                        w.serialize(row)?;
                        rows += 1;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(rows)
}

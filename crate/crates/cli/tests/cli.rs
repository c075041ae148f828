use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn doubleq(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_doubleq"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn analyze_baird_passes_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let o = doubleq(&["analyze"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("analysis.json")).unwrap())
            .unwrap();
    assert_eq!(v["pass"], true);
    assert!((v["g"].as_f64().unwrap() - 2.0 * v["g0"].as_f64().unwrap()).abs() < 1e-9);
    assert_eq!(v["model_hash"].as_str().unwrap().len(), 64);
    assert!(tmp.path().join("analysis.csv").exists());
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn refusals_name_the_precondition() {
    let tmp = tempfile::tempdir().unwrap();
    let o = doubleq(
        &["analyze", "--set", "environment.kind=gridworld"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NonUniqueOptimal"));
    let o = doubleq(&["analyze", "--set", "gain.factor=0.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("StepSizeTooSmall"));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("refusal.json")).unwrap())
            .unwrap();
    assert_eq!(r["refusal"], "StepSizeTooSmall");
}

#[test]
fn unknown_keys_fail_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let o = doubleq(&["simulate", "--set", "simulation.pathz=3"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("manifest.json").exists());
}

#[test]
fn shipped_configs_parse() {
    for name in ["baird", "maxbias", "gridworld", "bridge"] {
        let path = configs().join(format!("{name}.toml"));
        doubleq::ExperimentConfig::load(Some(&path), &[])
            .unwrap_or_else(|e| panic!("{name}: {e:#}"));
    }
}

#[test]
fn dump_config_round_trips() {
    let o = Command::new(env!("CARGO_BIN_EXE_doubleq"))
        .args(["--dump-config", "--set", "simulation.n_paths=9"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let cfg: doubleq::ExperimentConfig =
        toml::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg.simulation.n_paths, 9);
}

#[test]
fn verify_prints_seeds_and_fails_loudly() {
    let tmp = tempfile::tempdir().unwrap();
    let o = doubleq(
        &[
            "verify", "--suite", "lyapunov", "--trials", "3", "--seed", "40",
        ],
        tmp.path(),
    );
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for seed in 40..43 {
        assert!(text.contains(&format!("seed={seed} pass")), "{text}");
    }
    let o = doubleq(&["verify", "--suite", "nope"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("grid"), tmp.path().join("bias"));
    let o = doubleq(
        &[
            "simulate",
            "--config",
            configs().join("gridworld.toml").to_str().unwrap(),
            "--set",
            "simulation.n_steps=5000",
            "--set",
            "simulation.n_paths=4",
        ],
        &a,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // gridworld has tied optimal actions, so analysis is skipped with a note
    assert!(!a.join("analysis.json").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["details"]["analysis_refusal"], "NonUniqueOptimal");
    assert_eq!(manifest["files"].as_object().unwrap().len(), 4);

    let o = doubleq(
        &[
            "simulate",
            "--config",
            configs().join("maxbias.toml").to_str().unwrap(),
            "--set",
            "maxbias.runs=20",
        ],
        &b,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(b.join("maxbias_Q.csv")).unwrap();
    assert!(text.starts_with("algorithm,episode,p_left,runs,seed_base\n"));
    assert_eq!(text.lines().count(), 1 + 201);

    let out = tmp.path().join("merged");
    let o = Command::new(env!("CARGO_BIN_EXE_doubleq"))
        .arg("report")
        .arg(&a)
        .arg(&b)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let merged = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(merged.starts_with("run,file,algorithm,axis,index,metric,value\n"));
    assert!(merged.contains("grid,gridworld_Q.csv,Q,n,5000,mse_mean,"));
    assert!(merged.contains("bias,maxbias_DQ.csv,DQ,episode,200,p_left,"));
}

#[test]
fn linearized_algorithms_are_refused_on_max_bias() {
    let tmp = tempfile::tempdir().unwrap();
    let o = doubleq(
        &[
            "simulate",
            "--set",
            "environment.kind=maxbias",
            "--set",
            "simulation.algorithms=[\"Q_linearized\"]",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

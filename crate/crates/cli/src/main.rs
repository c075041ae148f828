use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use doubleq::commands::{self, Refusal};
use doubleq::output::verdict_name;
use doubleq::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "doubleq",
    version,
    about = "Asymptotic covariance analysis and simulation of Q-learning and Double Q-learning"
)]
struct Cli {
    /// TOML configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed base for simulation and verification.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Dotted-key override, e.g. `--set simulation.n_paths=50`.
    #[arg(long = "set", value_name = "K=V", global = true)]
    overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact asymptotic covariances of the configured environment.
    Analyze,
    /// Monte-Carlo error curves, one CSV per algorithm.
    Simulate,
    /// Property suite on seeded random instances.
    Verify {
        /// theorem2, theorem3, lemma3, lyapunov or bridge.
        #[arg(long)]
        suite: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Merge run directories into one long-format CSV.
    Report { runs: Vec<PathBuf> },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut overrides = cli.overrides.clone();
    if let Some(out) = &cli.out {
        overrides.push(format!("out={:?}", out.display().to_string()));
    }
    if let Some(seed) = cli.seed {
        overrides.push(format!("simulation.seed_base={seed}"));
        overrides.push(format!("verify.seed={seed}"));
    }
    if let Some(Command::Verify { suite, trials }) = &cli.command {
        if let Some(s) = suite {
            overrides.push(format!("verify.suite={s:?}"));
        }
        if let Some(t) = trials {
            overrides.push(format!("verify.trials={t}"));
        }
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    if cli.dump_config {
        print!("{}", cfg.to_toml()?);
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = cli.command else {
        anyhow::bail!("no command given (analyze, simulate, verify, report)");
    };
    match command {
        Command::Analyze => {
            let v = commands::analyze(&cfg, cli.threads)?;
            println!(
                "g = {} g0 = {} amse_q = {} amse_a = {} amse_avg = {} checks {}",
                v["g"],
                v["g0"],
                v["amse_q"],
                v["amse_a"],
                v["amse_avg"],
                if v["pass"] == true { "pass" } else { "FAIL" }
            );
            Ok(if v["pass"] == true {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Simulate => {
            let s = commands::simulate(&cfg, cli.threads)?;
            for f in &s.files {
                println!("wrote {}", f.display());
            }
            if s.diverged_paths > 0 {
                eprintln!("warning: {} sample paths diverged", s.diverged_paths);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { .. } => {
            let s = commands::verify(&cfg, cli.threads)?;
            let suite = cfg.verify.suite()?.name();
            for t in &s.outcomes {
                let metrics: Vec<String> = t
                    .metrics
                    .iter()
                    .map(|(k, v)| format!("{k}={v:e}"))
                    .collect();
                println!(
                    "{suite} seed={} {} {}",
                    t.seed,
                    verdict_name(t.verdict),
                    metrics.join(" ")
                );
            }
            println!(
                "{suite}: {} passed, {} failed, {} skipped",
                s.passed, s.failed, s.skipped
            );
            Ok(if s.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Report { runs } => {
            let out = PathBuf::from(&cfg.out);
            let rows = commands::report(&runs, &out)?;
            println!(
                "wrote {} rows to {}",
                rows,
                out.join("report.csv").display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            if let Some(r) = e.downcast_ref::<Refusal>() {
                eprintln!("{r}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}

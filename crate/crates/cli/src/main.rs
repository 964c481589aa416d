use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use kolmo_cli::config::{apply_seed_override, read_json};
use kolmo_cli::error::{CliError, CliResult, FailureKind};
use kolmo_cli::sweep::{sweep_csv, Sweep};
use kolmo_cli::verify::REPORT_FILE;
use kolmo_cli::{run_experiment, run_scaling_study, verify_theory, ExperimentConfig, ScalingStudySpec, VerifyConfig, SEED_ENV};
use kolmo_core::bounds::{bound_report, BoundInputs};
use kolmo_core::oracle::ReferenceSolution;
use kolmo_core::pde_model::PdeProblem;

#[derive(Parser)]
#[command(name = "kolmo", version, about = "Deep Kolmogorov solver: experiments, scaling studies, bounds and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its artifacts into the configured output_dir.
    Run { config: PathBuf },
    /// Run an experiment per dimension and repetition and summarise the scaling.
    Scaling { spec: PathBuf },
    /// Evaluate the bound formulas for a JSON input set.
    Bounds {
        inputs: PathBuf,
        /// Directory for bound_report.json and bound_sweep.csv; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        /// One-parameter sweep, `name=start:stop:count`.
        #[arg(long)]
        sweep: Option<String>,
        /// Space sweep values geometrically.
        #[arg(long)]
        geometric: bool,
    },
    /// Check the tail, moment growth, growth envelope and risk-gap identity.
    Verify {
        problem: PathBuf,
        /// Optional check settings as JSON.
        #[arg(long)]
        settings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate the reference solution at given points.
    Oracle {
        problem: PathBuf,
        /// Comma-separated coordinates; repeatable.
        #[arg(long = "at", required = true)]
        at: Vec<String>,
        #[arg(long, default_value_t = 100_000)]
        n_oracle: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn seed_env() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn write_file(dir: &Path, name: &str, body: &str) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io("output", e))?;
    fs::write(dir.join(name), body).map_err(|e| CliError::io("output", e))
}

fn run(path: &Path) -> CliResult<()> {
    let mut cfg: ExperimentConfig = read_json(path, "config")?;
    apply_seed_override(&mut cfg.seed, seed_env().as_deref())?;
    let out = run_experiment(&cfg)?;
    println!(
        "{}",
        json!({
            "output_dir": out.output_dir,
            "final_empirical_risk": out.train_report.final_empirical_risk,
            "l2_error_sq": out.error.report.l2_error_sq,
            "relative_l2_error": out.error.report.relative_l2_error,
            "within_target": out.error.within_target,
            "m_combined": out.bounds.report.as_ref().and_then(|r| r.m_combined),
        })
    );
    Ok(())
}

fn scaling(path: &Path) -> CliResult<()> {
    let mut spec: ScalingStudySpec = read_json(path, "scaling spec")?;
    apply_seed_override(&mut spec.seed, seed_env().as_deref())?;
    let out = run_scaling_study(&spec)?;
    println!("{}", json!({ "output_dir": spec.output_dir, "slopes": out.slopes }));
    match out.failures() {
        0 => Ok(()),
        n => Err(CliError {
            kind: FailureKind::PartialScaling,
            stage: "scaling".into(),
            message: format!("{n} of {} runs failed", out.rows.len()),
        }),
    }
}

fn bounds(path: &Path, out: Option<&Path>, sweep: Option<&str>, geometric: bool) -> CliResult<()> {
    let inputs: BoundInputs = read_json(path, "bound inputs")?;
    let report = bound_report(&inputs).map_err(|e| CliError::from_core("bound inputs", true, e))?;
    let csv = match sweep {
        Some(s) => {
            let mut sw: Sweep = s.parse()?;
            sw.geometric = geometric;
            Some(sweep_csv(&inputs, &sw)?)
        }
        None => None,
    };
    match out {
        Some(dir) => {
            write_file(dir, "bound_report.json", &pretty(&report))?;
            if let Some(csv) = &csv {
                write_file(dir, "bound_sweep.csv", csv)?;
            }
        }
        None => {
            println!("{}", pretty(&report));
            if let Some(csv) = &csv {
                print!("{csv}");
            }
        }
    }
    Ok(())
}

fn verify(path: &Path, settings: Option<&Path>, out: Option<&Path>, seed: Option<u64>) -> CliResult<()> {
    let problem: PdeProblem = read_json(path, "problem")?;
    let mut cfg: VerifyConfig = match settings {
        Some(s) => read_json(s, "verify settings")?,
        None => VerifyConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    apply_seed_override(&mut cfg.seed, seed_env().as_deref())?;
    let report = verify_theory(&problem, &cfg)?;
    for c in &report.checks {
        eprintln!("{:<16} {:?}", c.name, c.status);
    }
    match out {
        Some(dir) => write_file(dir, REPORT_FILE, &pretty(&report)),
        None => {
            println!("{}", pretty(&report));
            Ok(())
        }
    }
}

fn oracle(path: &Path, at: &[String], n_oracle: usize, seed: u64) -> CliResult<()> {
    let problem: PdeProblem = read_json(path, "problem")?;
    let reference =
        ReferenceSolution::auto(problem, n_oracle, seed).map_err(|e| CliError::from_core("oracle", true, e))?;
    for raw in at {
        let x: Vec<f64> = raw
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::validation("oracle", format!("cannot parse point {raw:?}")))?;
        let (value, ci) = reference
            .eval_with_ci(&x)
            .map_err(|e| CliError::from_core("oracle", true, e))?;
        println!("{}", json!({ "x": x, "value": value, "ci_halfwidth": ci, "kind": reference.kind }));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run(config),
        Command::Scaling { spec } => scaling(spec),
        Command::Bounds { inputs, out, sweep, geometric } => bounds(inputs, out.as_deref(), sweep.as_deref(), *geometric),
        Command::Verify { problem, settings, out, seed } => verify(problem, settings.as_deref(), out.as_deref(), *seed),
        Command::Oracle { problem, at, n_oracle, seed } => oracle(problem, at, *n_oracle, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

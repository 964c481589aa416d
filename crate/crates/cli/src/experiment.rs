//! One end-to-end trial: simulate data, train, measure the error against a
//! reference solution, evaluate the bound thresholds, and persist everything.

use std::fs;
use std::path::{Path, PathBuf};

use kolmo_core::bounds::{bound_report, estimate_m4d, fit_tail_default, BoundInputs, BoundReport, TailParams};
use kolmo_core::erm_train::{train, TrainConfig, TrainReport};
use kolmo_core::neural::ClippedNetwork;
use kolmo_core::oracle::{estimation_error_l2, ErrorReport, ReferenceKind};
use kolmo_core::sde_sim::{make_dataset, sample_terminal, sample_uniform_inputs, EmConfig, RngStream};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::svg::{line_chart, Axes, Series};

/// Rows used to estimate `c1` and `M_{4,d}` when they are not configured.
pub const BOUND_ESTIMATION_ROWS: usize = 100_000;

const DATA_STREAM: u64 = 1;
const QUADRATURE_STREAM: u64 = 3;
const TAIL_STREAM: u64 = 4;
const MOMENT_STREAM: u64 = 5;

pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const ERROR_REPORT_FILE: &str = "error_report.json";
pub const BOUND_REPORT_FILE: &str = "bound_report.json";
pub const RISK_CSV_FILE: &str = "risk_curve.csv";
pub const RISK_SVG_FILE: &str = "risk_curve.svg";
pub const NETWORK_FILE: &str = "network.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorArtifact {
    #[serde(flatten)]
    pub report: ErrorReport,
    pub oracle: ReferenceKind,
    pub target_eps: f64,
    /// `l2_error_sq ≤ ε` for this single trial; recorded, never gated on.
    pub within_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantSource {
    Config,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundArtifact {
    pub inputs: Option<BoundInputs>,
    pub c1_source: ConstantSource,
    pub m4d_source: ConstantSource,
    pub tail_fit: Option<TailParams>,
    pub report: Option<BoundReport>,
    /// Why `report` is missing or partial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
    /// Present in the output directory but not hashed.
    pub unhashed: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub network: ClippedNetwork,
    pub train_report: TrainReport,
    pub error: ErrorArtifact,
    pub bounds: BoundArtifact,
    pub manifest: Manifest,
}

/// Runs the pipeline; on failure writes `diagnostic.json` into the output
/// directory and returns the error carrying its exit code.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<ExperimentOutcome> {
    let result = run_inner(cfg);
    if let Err(e) = &result {
        let _ = e.write_diagnostic(&cfg.output_dir);
    }
    result
}

fn run_inner(cfg: &ExperimentConfig) -> CliResult<ExperimentOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::validation("config", format!("output_dir not writable: {e}")))?;
    let numeric = |stage: &'static str| move |e| CliError::from_core(stage, false, e);

    let p = &cfg.problem;
    let data = make_dataset(p, cfg.data_m, &RngStream::new(cfg.seed, DATA_STREAM)).map_err(numeric("data"))?;
    let train_cfg = TrainConfig {
        seed: cfg.train_seed(),
        ..cfg.train.clone()
    };
    let (network, train_report) = train(p, &data, &cfg.hypothesis, &train_cfg).map_err(numeric("train"))?;

    let reference = cfg.oracle.build(p, cfg.seed).map_err(numeric("oracle"))?;
    let report = estimation_error_l2(
        &network,
        &reference,
        &p.domain,
        cfg.n_quadrature,
        &RngStream::new(cfg.seed, QUADRATURE_STREAM),
    )
    .map_err(numeric("error"))?;
    let error = ErrorArtifact {
        within_target: report.l2_error_sq <= cfg.target.eps,
        report,
        oracle: reference.kind.clone(),
        target_eps: cfg.target.eps,
    };
    let bounds = compute_bounds(cfg)?;

    let write = |name: &str, body: String| -> CliResult<Vec<u8>> {
        fs::write(out.join(name), &body).map_err(|e| CliError::io("write", e))?;
        Ok(body.into_bytes())
    };
    let mut hashed: Vec<(String, Vec<u8>)> = Vec::new();
    let experiment_doc = serde_json::json!({
        "config": cfg,
        "problem_hash": p.content_hash(),
        "dataset": data.meta,
        "train_seed": train_cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    hashed.push((EXPERIMENT_FILE.into(), write(EXPERIMENT_FILE, pretty(&experiment_doc))?));
    write(TRAIN_REPORT_FILE, pretty(&train_report))?;
    hashed.push((TRAIN_REPORT_FILE.into(), timing_free(&train_report).into_bytes()));
    hashed.push((ERROR_REPORT_FILE.into(), write(ERROR_REPORT_FILE, pretty(&error))?));
    hashed.push((BOUND_REPORT_FILE.into(), write(BOUND_REPORT_FILE, pretty(&bounds))?));
    hashed.push((RISK_CSV_FILE.into(), write(RISK_CSV_FILE, train_report.risk_curve_csv())?));
    hashed.push((NETWORK_FILE.into(), write(NETWORK_FILE, pretty(&network.to_json()))?));
    write(RISK_SVG_FILE, risk_svg(&train_report))?;

    let manifest = Manifest {
        files: hashed
            .iter()
            .map(|(path, bytes)| ManifestEntry {
                path: path.clone(),
                sha256: hex::encode(Sha256::digest(bytes)),
            })
            .collect(),
        unhashed: vec![RISK_SVG_FILE.into()],
    };
    write(MANIFEST_FILE, pretty(&manifest))?;

    Ok(ExperimentOutcome {
        output_dir: out,
        network,
        train_report,
        error,
        bounds,
        manifest,
    })
}

/// The train report with its wall-clock field removed, as hashed in the manifest.
pub fn timing_free(report: &TrainReport) -> String {
    let mut v = serde_json::to_value(report).expect("report serializes");
    v.as_object_mut().expect("object").remove("wall_time_s");
    serde_json::to_string_pretty(&v).expect("value serializes")
}

fn risk_svg(report: &TrainReport) -> String {
    let points = report
        .risk_curve
        .iter()
        .enumerate()
        .map(|(e, r)| ((e + 1) as f64, *r))
        .collect();
    line_chart(
        "Empirical risk per epoch",
        "epoch",
        "empirical risk",
        &[Series {
            name: "train".into(),
            points,
        }],
        Axes { log_x: false, log_y: true },
    )
}

fn compute_bounds(cfg: &ExperimentConfig) -> CliResult<BoundArtifact> {
    let p = &cfg.problem;
    let env = p.initial.envelope();
    let mut notes = Vec::new();

    let (c1, c1_source, tail_fit) = match cfg.bounds.c1 {
        Some(c1) => (Some(c1), ConstantSource::Config, None),
        None => {
            let rng = RngStream::new(cfg.seed, TAIL_STREAM);
            let xs = sample_uniform_inputs(&p.domain, BOUND_ESTIMATION_ROWS, &rng.split(0))
                .map_err(|e| CliError::from_core("bounds", false, e))?;
            let ys = sample_terminal(p, xs.view(), &rng.split(1), &EmConfig::default())
                .map_err(|e| CliError::from_core("bounds", false, e))?;
            match fit_tail_default(ys.view()) {
                Ok(t) => {
                    if !t.pass {
                        notes.push(format!("tail fit did not pass at t = {:?}", t.violations));
                    }
                    let c1 = (t.c1 > 0.0).then_some(t.c1);
                    (c1, ConstantSource::Estimated, Some(t))
                }
                Err(e) => {
                    notes.push(format!("tail constant not estimable: {e}"));
                    (None, ConstantSource::Estimated, None)
                }
            }
        }
    };
    let (m4d, m4d_source) = match cfg.bounds.m4d {
        Some(m) => (m, ConstantSource::Config),
        None => (
            estimate_m4d(p, BOUND_ESTIMATION_ROWS, &RngStream::new(cfg.seed, MOMENT_STREAM))
                .map_err(|e| CliError::from_core("bounds", false, e))?,
            ConstantSource::Estimated,
        ),
    };

    let Some(c1) = c1 else {
        return Ok(BoundArtifact {
            inputs: None,
            c1_source,
            m4d_source,
            tail_fit,
            report: None,
            note: Some(notes.join("; ")),
        });
    };
    let inputs = BoundInputs {
        arch: cfg.hypothesis.arch.clone(),
        param_bound_r: cfg.hypothesis.param_bound_r,
        clip_d: cfg.hypothesis.clip_d,
        u: p.domain.u,
        v: p.domain.v,
        eps: cfg.target.eps,
        rho: cfg.target.rho,
        lambda: cfg.bounds.lambda.unwrap_or(env.lambda),
        c1,
        c2: cfg.bounds.c2.unwrap_or(env.c2),
        b_dk: None,
        m4d: Some(m4d),
        truncation_k: cfg.bounds.truncation_k,
    };
    let report = match bound_report(&inputs) {
        Ok(r) => {
            if r.m_combined.is_none() {
                notes.push("combined threshold exceeds the search range".into());
            }
            Some(r)
        }
        Err(e) => {
            notes.push(format!("bound evaluation failed: {e}"));
            None
        }
    };
    Ok(BoundArtifact {
        inputs: Some(inputs),
        c1_source,
        m4d_source,
        tail_fit,
        report,
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    })
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifact serializes")
}

/// Reads the numeric artifacts back for comparison across runs.
pub fn read_artifact(dir: &Path, name: &str) -> std::io::Result<String> {
    fs::read_to_string(dir.join(name))
}

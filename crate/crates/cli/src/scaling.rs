//! Repeated experiments across dimensions, with the sample size and network
//! size growing by fixed rules, summarised as log-log slopes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use kolmo_core::erm_train::{HypothesisClass, TrainConfig};
use kolmo_core::neural::Architecture;
use kolmo_core::pde_model::{DynamicsSpec, HypercubeDomain, InitialFunction, PdeProblem};
use kolmo_core::sde_sim::splitmix64;
use kolmo_core::stats::linear_fit;
use serde::{Deserialize, Serialize};

use crate::config::{BoundOverrides, ExperimentConfig, OracleChoice, Target};
use crate::error::{CliError, CliResult};
use crate::experiment::run_experiment;
use crate::svg::{line_chart, Axes, Series};

pub const RUNS_FILE: &str = "scaling_runs.csv";
pub const SUMMARY_FILE: &str = "scaling_summary.csv";
pub const SLOPES_FILE: &str = "scaling_slopes.json";
pub const PLOT_FILE: &str = "scaling.svg";

/// A problem defined for every dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ProblemFamily {
    /// Heat dynamics with `φ(y) = c Σ y_i^k`.
    HeatPolynomial {
        u: f64,
        v: f64,
        #[serde(rename = "horizon_T")]
        horizon: f64,
        coeff: f64,
        degree: u32,
    },
    /// Uncorrelated Black-Scholes with the equally weighted basket call.
    BlackScholesBasket {
        u: f64,
        v: f64,
        #[serde(rename = "horizon_T")]
        horizon: f64,
        alpha: f64,
        beta: f64,
        strike: f64,
    },
    /// Uncorrelated Black-Scholes with the unit-weight call on max.
    BlackScholesCallOnMax {
        u: f64,
        v: f64,
        #[serde(rename = "horizon_T")]
        horizon: f64,
        alpha: f64,
        beta: f64,
        strike: f64,
    },
}

impl ProblemFamily {
    pub fn build(&self, d: usize) -> PdeProblem {
        match *self {
            ProblemFamily::HeatPolynomial { u, v, horizon, coeff, degree } => PdeProblem {
                domain: HypercubeDomain::new(u, v, d),
                dynamics: DynamicsSpec::Heat,
                initial: InitialFunction::polynomial(vec![coeff; d], degree),
                horizon,
            },
            ProblemFamily::BlackScholesBasket { u, v, horizon, alpha, beta, strike } => PdeProblem {
                domain: HypercubeDomain::new(u, v, d),
                dynamics: DynamicsSpec::black_scholes_uncorrelated(vec![alpha; d], vec![beta; d]),
                initial: InitialFunction::basket_call(vec![1.0 / d as f64; d], strike),
                horizon,
            },
            ProblemFamily::BlackScholesCallOnMax { u, v, horizon, alpha, beta, strike } => PdeProblem {
                domain: HypercubeDomain::new(u, v, d),
                dynamics: DynamicsSpec::black_scholes_uncorrelated(vec![alpha; d], vec![beta; d]),
                initial: InitialFunction::call_on_max(vec![1.0; d], strike),
                horizon,
            },
        }
    }
}

/// `m(d) = round(base · d^exponent)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRule {
    pub base: f64,
    pub exponent: f64,
}

impl Default for SampleRule {
    fn default() -> Self {
        Self {
            base: 10_000.0,
            exponent: 1.0,
        }
    }
}

/// Width `width_per_d · d` and depth `L(a) = depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchRule {
    pub width_per_d: usize,
    pub depth: usize,
}

impl Default for ArchRule {
    fn default() -> Self {
        Self {
            width_per_d: 16,
            depth: 3,
        }
    }
}

impl ArchRule {
    pub fn build(&self, d: usize) -> kolmo_core::Result<Architecture> {
        if self.depth < 2 {
            return Err(kolmo_core::KolmoError::invalid("arch depth must be at least 2"));
        }
        Architecture::uniform(d, self.width_per_d * d, self.depth - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudySpec {
    pub family: ProblemFamily,
    pub d_list: Vec<usize>,
    /// Target relative L² error; also used as `ε` for the bound report.
    pub target_error: f64,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub m_rule: SampleRule,
    /// Per-dimension sample sizes replacing `m_rule`.
    #[serde(default)]
    pub m_overrides: BTreeMap<usize, usize>,
    #[serde(default)]
    pub arch_rule: ArchRule,
    #[serde(rename = "R")]
    pub param_bound_r: f64,
    #[serde(rename = "D")]
    pub clip_d: f64,
    pub train: TrainConfig,
    pub n_quadrature: usize,
    #[serde(default)]
    pub oracle: OracleChoice,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub bounds: BoundOverrides,
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn one() -> usize {
    1
}

fn default_rho() -> f64 {
    0.1
}

impl ScalingStudySpec {
    pub fn validate(&self) -> CliResult<()> {
        let fail = |m: &str| Err(CliError::validation("scaling spec", m));
        if self.d_list.is_empty() || self.d_list[0] == 0 {
            return fail("d_list must be nonempty with positive entries");
        }
        if self.d_list.windows(2).any(|w| w[1] <= w[0]) {
            return fail("d_list must be strictly increasing");
        }
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1");
        }
        if !(self.target_error > 0.0 && self.target_error < 1.0) {
            return fail("target_error must lie in (0, 1)");
        }
        if !(self.m_rule.base >= 1.0 && self.m_rule.exponent.is_finite()) {
            return fail("m_rule needs base ≥ 1 and a finite exponent");
        }
        self.arch_rule
            .build(1)
            .map_err(|e| CliError::from_core("scaling spec", true, e))?;
        for &d in &self.d_list {
            self.config_for(d, 0)?.validate()?;
        }
        Ok(())
    }

    pub fn m_for(&self, d: usize) -> usize {
        self.m_overrides
            .get(&d)
            .copied()
            .unwrap_or_else(|| (self.m_rule.base * (d as f64).powf(self.m_rule.exponent)).round() as usize)
    }

    pub fn config_for(&self, d: usize, rep: usize) -> CliResult<ExperimentConfig> {
        let arch = self
            .arch_rule
            .build(d)
            .map_err(|e| CliError::from_core("scaling spec", true, e))?;
        let m = self.m_for(d);
        let mut train = self.train.clone();
        train.batch_size = train.batch_size.min(m.max(1));
        Ok(ExperimentConfig {
            problem: self.family.build(d),
            hypothesis: HypothesisClass {
                arch,
                param_bound_r: self.param_bound_r,
                clip_d: self.clip_d,
            },
            train,
            data_m: m,
            oracle: self.oracle.clone(),
            n_quadrature: self.n_quadrature,
            output_dir: self.output_dir.join(format!("d{d}_r{rep}")),
            seed: splitmix64(self.seed ^ splitmix64(((d as u64) << 32) | rep as u64)),
            target: Target {
                eps: self.target_error,
                rho: self.rho,
            },
            bounds: self.bounds.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub d: usize,
    pub repetition: usize,
    pub m: usize,
    pub param_count: usize,
    pub exit_code: i32,
    pub l2_error_sq: Option<f64>,
    pub relative_l2_error: Option<f64>,
    pub within_target: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub d: usize,
    pub m: usize,
    pub param_count: usize,
    pub runs: usize,
    pub failures: usize,
    /// Fraction of runs with relative error at or below the target.
    pub success_fraction: f64,
    pub rel_error_min: Option<f64>,
    pub rel_error_median: Option<f64>,
    pub rel_error_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSlopes {
    /// `ln m` against `ln d`.
    pub m_vs_d: SlopeFit,
    /// `ln P(a)` against `ln d`.
    pub params_vs_d: SlopeFit,
    /// `ln` of the median relative error against `ln d`, over dimensions with a success.
    pub error_vs_d: Option<SlopeFit>,
}

#[derive(Debug, Clone)]
pub struct ScalingOutcome {
    pub rows: Vec<ScalingRow>,
    pub summary: Vec<DimensionSummary>,
    pub slopes: ScalingSlopes,
}

impl ScalingOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.exit_code != 0).count()
    }
}

fn median(sorted: &[f64]) -> Option<f64> {
    match sorted.len() {
        0 => None,
        n if n % 2 == 1 => Some(sorted[n / 2]),
        n => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

fn slope(xs: &[f64], ys: &[f64]) -> SlopeFit {
    if xs.len() < 2 {
        return SlopeFit {
            slope: 0.0,
            r_squared: 0.0,
            n_points: xs.len(),
        };
    }
    let fit = linear_fit(xs, ys);
    SlopeFit {
        slope: fit.slope,
        r_squared: if fit.r_squared.is_finite() { fit.r_squared } else { 0.0 },
        n_points: xs.len(),
    }
}

/// Runs every `(d, repetition)` pair. Individual failures are recorded and
/// the study continues; the caller maps a nonzero failure count to exit 4.
pub fn run_scaling_study(spec: &ScalingStudySpec) -> CliResult<ScalingOutcome> {
    spec.validate()?;
    fs::create_dir_all(&spec.output_dir)
        .map_err(|e| CliError::validation("scaling spec", format!("output_dir not writable: {e}")))?;
    let mut rows = Vec::new();
    for &d in &spec.d_list {
        for rep in 0..spec.repetitions {
            let cfg = spec.config_for(d, rep)?;
            let base = ScalingRow {
                d,
                repetition: rep,
                m: cfg.data_m,
                param_count: cfg.hypothesis.arch.param_count(),
                exit_code: 0,
                l2_error_sq: None,
                relative_l2_error: None,
                within_target: false,
                message: String::new(),
            };
            rows.push(match run_experiment(&cfg) {
                Ok(out) => ScalingRow {
                    l2_error_sq: Some(out.error.report.l2_error_sq),
                    relative_l2_error: Some(out.error.report.relative_l2_error),
                    within_target: out.error.report.relative_l2_error <= spec.target_error,
                    message: "ok".into(),
                    ..base
                },
                Err(e) => ScalingRow {
                    exit_code: e.exit_code(),
                    message: e.to_string(),
                    ..base
                },
            });
        }
    }

    let summary: Vec<DimensionSummary> = spec
        .d_list
        .iter()
        .map(|&d| {
            let runs: Vec<&ScalingRow> = rows.iter().filter(|r| r.d == d).collect();
            let mut errs: Vec<f64> = runs.iter().filter_map(|r| r.relative_l2_error).collect();
            errs.sort_by(|a, b| a.total_cmp(b));
            DimensionSummary {
                d,
                m: runs[0].m,
                param_count: runs[0].param_count,
                runs: runs.len(),
                failures: runs.iter().filter(|r| r.exit_code != 0).count(),
                success_fraction: runs.iter().filter(|r| r.within_target).count() as f64 / runs.len() as f64,
                rel_error_min: errs.first().copied(),
                rel_error_median: median(&errs),
                rel_error_max: errs.last().copied(),
            }
        })
        .collect();

    let ld: Vec<f64> = summary.iter().map(|s| (s.d as f64).ln()).collect();
    let lm: Vec<f64> = summary.iter().map(|s| (s.m as f64).ln()).collect();
    let lp: Vec<f64> = summary.iter().map(|s| (s.param_count as f64).ln()).collect();
    let (ed, ee): (Vec<f64>, Vec<f64>) = summary
        .iter()
        .filter_map(|s| s.rel_error_median.filter(|e| *e > 0.0).map(|e| ((s.d as f64).ln(), e.ln())))
        .unzip();
    let slopes = ScalingSlopes {
        m_vs_d: slope(&ld, &lm),
        params_vs_d: slope(&ld, &lp),
        error_vs_d: (!ed.is_empty()).then(|| slope(&ed, &ee)),
    };

    write_outputs(spec, &rows, &summary, &slopes)?;
    Ok(ScalingOutcome { rows, summary, slopes })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_outputs(
    spec: &ScalingStudySpec,
    rows: &[ScalingRow],
    summary: &[DimensionSummary],
    slopes: &ScalingSlopes,
) -> CliResult<()> {
    let dir = &spec.output_dir;
    let io = |e| CliError::io("scaling output", e);

    let mut runs = String::from("d,repetition,m,param_count,exit_code,l2_error_sq,relative_l2_error,within_target\n");
    for r in rows {
        writeln!(
            runs,
            "{},{},{},{},{},{},{},{}",
            r.d,
            r.repetition,
            r.m,
            r.param_count,
            r.exit_code,
            opt(r.l2_error_sq),
            opt(r.relative_l2_error),
            r.within_target
        )
        .unwrap();
    }
    fs::write(dir.join(RUNS_FILE), runs).map_err(io)?;

    let mut sum = String::from("d,m,param_count,runs,failures,success_fraction,rel_error_min,rel_error_median,rel_error_max\n");
    for s in summary {
        writeln!(
            sum,
            "{},{},{},{},{},{},{},{},{}",
            s.d,
            s.m,
            s.param_count,
            s.runs,
            s.failures,
            s.success_fraction,
            opt(s.rel_error_min),
            opt(s.rel_error_median),
            opt(s.rel_error_max)
        )
        .unwrap();
    }
    fs::write(dir.join(SUMMARY_FILE), sum).map_err(io)?;
    fs::write(
        dir.join(SLOPES_FILE),
        serde_json::to_string_pretty(slopes).expect("slopes serialize"),
    )
    .map_err(io)?;

    let series = vec![
        Series {
            name: format!("m (slope {:.2})", slopes.m_vs_d.slope),
            points: summary.iter().map(|s| (s.d as f64, s.m as f64)).collect(),
        },
        Series {
            name: format!("P(a) (slope {:.2})", slopes.params_vs_d.slope),
            points: summary.iter().map(|s| (s.d as f64, s.param_count as f64)).collect(),
        },
    ];
    let svg = line_chart(
        "Sample size and network size against dimension",
        "d",
        "m, P(a)",
        &series,
        Axes { log_x: true, log_y: true },
    );
    fs::write(dir.join(PLOT_FILE), svg).map_err(io)?;
    Ok(())
}

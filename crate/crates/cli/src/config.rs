use std::path::{Path, PathBuf};

use kolmo_core::erm_train::{HypothesisClass, TrainConfig};
use kolmo_core::oracle::{ReferenceKind, ReferenceSolution, MIN_ORACLE_DRAWS};
use kolmo_core::pde_model::PdeProblem;
use kolmo_core::sde_sim::splitmix64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "KOLMO_SEED";

/// Which reference solution the estimation error is measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleChoice {
    /// A closed form when one applies, Monte Carlo otherwise.
    Auto {
        #[serde(default = "default_n_oracle")]
        n_oracle: usize,
    },
    ClosedFormHeatPoly,
    ClosedFormBsCall1d,
    MonteCarlo { n_oracle: usize, seed: u64 },
}

fn default_n_oracle() -> usize {
    MIN_ORACLE_DRAWS
}

impl Default for OracleChoice {
    fn default() -> Self {
        OracleChoice::Auto {
            n_oracle: default_n_oracle(),
        }
    }
}

impl OracleChoice {
    pub fn build(&self, problem: &PdeProblem, seed: u64) -> kolmo_core::Result<ReferenceSolution> {
        match self {
            OracleChoice::Auto { n_oracle } => ReferenceSolution::auto(problem.clone(), *n_oracle, seed),
            OracleChoice::ClosedFormHeatPoly => {
                ReferenceSolution::new(ReferenceKind::ClosedFormHeatPoly, problem.clone())
            }
            OracleChoice::ClosedFormBsCall1d => {
                ReferenceSolution::new(ReferenceKind::ClosedFormBsCall1d, problem.clone())
            }
            OracleChoice::MonteCarlo { n_oracle, seed } => ReferenceSolution::new(
                ReferenceKind::MonteCarlo {
                    n_oracle: *n_oracle,
                    seed: *seed,
                },
                problem.clone(),
            ),
        }
    }
}

/// Accuracy `ε` and confidence `ϱ` fed to the bound calculators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub eps: f64,
    pub rho: f64,
}

impl Default for Target {
    fn default() -> Self {
        Self { eps: 0.1, rho: 0.1 }
    }
}

/// Optional replacements for the estimated or derived bound constants.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(rename = "M4d", default, skip_serializing_if = "Option::is_none")]
    pub m4d: Option<f64>,
    #[serde(rename = "truncation_K", default, skip_serializing_if = "Option::is_none")]
    pub truncation_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: PdeProblem,
    pub hypothesis: HypothesisClass,
    pub train: TrainConfig,
    pub data_m: usize,
    #[serde(default)]
    pub oracle: OracleChoice,
    pub n_quadrature: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub target: Target,
    #[serde(default)]
    pub bounds: BoundOverrides,
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        let fail = |m: String| Err(CliError::validation("config", m));
        self.problem
            .validate()
            .map_err(|e| CliError::from_core("config", true, e))?;
        let d = self.problem.dim();
        if self.hypothesis.arch.input_dim() != d {
            return fail(format!(
                "architecture input size {} does not match problem dimension {d}",
                self.hypothesis.arch.input_dim()
            ));
        }
        let h = &self.hypothesis;
        if !(h.param_bound_r > 0.0 && h.param_bound_r.is_finite()) {
            return fail("hypothesis R must be positive".into());
        }
        if !(h.clip_d > 0.0 && h.clip_d.is_finite()) {
            return fail("hypothesis D must be positive".into());
        }
        if self.data_m == 0 {
            return fail("data_m must be at least 1".into());
        }
        self.train
            .validate(self.data_m)
            .map_err(|e| CliError::from_core("config", true, e))?;
        if self.n_quadrature < 2 {
            return fail("n_quadrature must be at least 2".into());
        }
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.target.eps) {
            return fail(format!("target eps must lie in (0, 1), got {}", self.target.eps));
        }
        if !unit(self.target.rho) {
            return fail(format!("target rho must lie in (0, 1), got {}", self.target.rho));
        }
        for (name, v) in [
            ("c1", self.bounds.c1),
            ("c2", self.bounds.c2),
            ("M4d", self.bounds.m4d),
            ("truncation_K", self.bounds.truncation_k),
        ] {
            if matches!(v, Some(x) if !(x > 0.0 && x.is_finite())) {
                return fail(format!("bounds.{name} must be positive"));
            }
        }
        if matches!(self.bounds.lambda, Some(l) if !(l >= 2.0)) {
            return fail("bounds.lambda must be at least 2".into());
        }
        self.oracle
            .build(&self.problem, self.seed)
            .map_err(|e| CliError::from_core("config", true, e))?;
        Ok(())
    }

    /// Seed handed to the training loop.
    pub fn train_seed(&self) -> u64 {
        splitmix64(self.seed ^ splitmix64(self.train.seed))
    }
}

/// Replaces `seed` by the value of `KOLMO_SEED` when that is set.
pub fn apply_seed_override(seed: &mut u64, env_value: Option<&str>) -> CliResult<()> {
    if let Some(raw) = env_value {
        *seed = raw
            .trim()
            .parse()
            .map_err(|_| CliError::validation("config", format!("{SEED_ENV} is not an unsigned integer: {raw:?}")))?;
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, stage: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(stage, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(stage, format!("{}: {e}", path.display())))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use kolmo_core::neural::Architecture;

    pub(crate) fn heat_config() -> ExperimentConfig {
        ExperimentConfig {
            problem: PdeProblem::heat_polynomial(0.0, 1.0, 0.5, vec![1.0], 2),
            hypothesis: HypothesisClass {
                arch: Architecture::new(vec![1, 8, 1]).unwrap(),
                param_bound_r: 5.0,
                clip_d: 10.0,
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 64,
                ..TrainConfig::default()
            },
            data_m: 512,
            oracle: OracleChoice::default(),
            n_quadrature: 1000,
            output_dir: PathBuf::from("out"),
            seed: 1,
            target: Target::default(),
            bounds: BoundOverrides::default(),
        }
    }

    #[test]
    fn valid_config_passes() {
        heat_config().validate().unwrap();
    }

    #[test]
    fn invalid_fields_are_validation_errors() {
        let mut c = heat_config();
        c.target.eps = 1.5;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = heat_config();
        c.train.batch_size = 10_000;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = heat_config();
        c.hypothesis.arch = Architecture::new(vec![2, 4, 1]).unwrap();
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = heat_config();
        c.oracle = OracleChoice::ClosedFormBsCall1d;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = heat_config();
        c.problem.horizon = -1.0;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let c = heat_config();
        let text = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v.as_object_mut().unwrap().remove("oracle");
        v.as_object_mut().unwrap().remove("target");
        let back: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back.oracle, OracleChoice::Auto { n_oracle: 10_000 });
        assert_eq!(back.target, Target::default());
    }

    #[test]
    fn seed_override() {
        let mut s = 5;
        apply_seed_override(&mut s, None).unwrap();
        assert_eq!(s, 5);
        apply_seed_override(&mut s, Some(" 42 ")).unwrap();
        assert_eq!(s, 42);
        assert_eq!(apply_seed_override(&mut s, Some("x")).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn train_seed_depends_on_both_seeds() {
        let a = heat_config();
        let mut b = heat_config();
        b.seed = 2;
        let mut c = heat_config();
        c.train.seed = 9;
        assert_ne!(a.train_seed(), b.train_seed());
        assert_ne!(a.train_seed(), c.train_seed());
    }
}

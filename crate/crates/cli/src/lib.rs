//! Command-line front end for `kolmo-core`: single experiments with
//! artifacts, scaling studies across dimensions, bound evaluation with
//! parameter sweeps, and empirical checks of the theory's assumptions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod scaling;
pub mod svg;
pub mod sweep;
pub mod verify;

pub use config::{ExperimentConfig, OracleChoice, SEED_ENV};
pub use error::{CliError, CliResult, FailureKind};
pub use experiment::{run_experiment, ExperimentOutcome};
pub use scaling::{run_scaling_study, ScalingOutcome, ScalingStudySpec};
pub use verify::{verify_theory, verify_theory_with_terminals, VerifyConfig, VerifyReport};

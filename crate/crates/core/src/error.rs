use thiserror::Error;

use crate::pde_model::Violation;

pub type Result<T> = std::result::Result<T, KolmoError>;

#[derive(Debug, Error)]
pub enum KolmoError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid problem: {}", format_violations(.0))]
    InvalidProblem(Vec<Violation>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {what} (row {row}, step {step})")]
    NonFinite {
        what: &'static str,
        row: usize,
        step: usize,
    },

    #[error("training diverged at epoch {epoch}, step {step}: risk = {risk}")]
    Divergence { epoch: usize, step: usize, risk: f64 },

    #[error("no m in [{lo}, {hi}] satisfies the combined conditions")]
    Infeasible { lo: u64, hi: u64 },

    #[error("tail grid is empty after filtering")]
    EmptyGrid,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl KolmoError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        KolmoError::InvalidInput(msg.into())
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.reason.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

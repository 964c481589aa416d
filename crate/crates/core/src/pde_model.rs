//! Problem data for linear Kolmogorov PDEs with affine coefficients.
//!
//! A [`PdeProblem`] binds the hypercube on which the endpoint solution is
//! approximated, the drift/diffusion of the associated SDE, the initial
//! (payoff) function and the horizon `T`. Everything here is plain data plus
//! pure evaluation; sampling lives in [`crate::sde_sim`].

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KolmoError, Result};

const SIGMA_ROW_TOL: f64 = 1e-9;
const BASKET_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypercubeDomain {
    pub u: f64,
    pub v: f64,
    pub d: usize,
}

impl HypercubeDomain {
    pub fn new(u: f64, v: f64, d: usize) -> Self {
        Self { u, v, d }
    }

    /// `max{1, |u|, |v|}`, the scale entering the covering-number bound.
    pub fn scale(&self) -> f64 {
        1f64.max(self.u.abs()).max(self.v.abs())
    }
}

/// Drift and diffusion of the SDE `dS = mu(S) dt + sigma(S) dB`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum DynamicsSpec {
    /// `mu = 0`, `sigma = sqrt(2) I`.
    Heat,
    /// `mu_i(x) = alpha_i x_i`, `sigma(x) = diag(beta_i x_i) * Sigma`.
    BlackScholes {
        alpha: Vec<f64>,
        beta: Vec<f64>,
        sigma_rows: Vec<Vec<f64>>,
    },
    /// `mu(x) = drift_matrix x + drift_offset` and
    /// `sigma(x) = S_0 + sum_k x_k S_k` where `diffusion_matrices = [S_0, S_1, ..., S_d]`.
    GenericAffine {
        drift_matrix: Vec<Vec<f64>>,
        drift_offset: Vec<f64>,
        diffusion_matrices: Vec<Vec<Vec<f64>>>,
    },
}

impl DynamicsSpec {
    pub fn black_scholes_uncorrelated(alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        let d = alpha.len();
        DynamicsSpec::BlackScholes {
            alpha,
            beta,
            sigma_rows: identity(d),
        }
    }

    /// Rewrites any variant as explicit affine maps in dimension `d`.
    pub fn to_generic_affine(&self, d: usize) -> DynamicsSpec {
        match self {
            DynamicsSpec::Heat => {
                let mut s0 = identity(d);
                for (i, row) in s0.iter_mut().enumerate() {
                    row[i] = std::f64::consts::SQRT_2;
                }
                let mut diffusion = vec![s0];
                diffusion.extend((0..d).map(|_| zeros(d)));
                DynamicsSpec::GenericAffine {
                    drift_matrix: zeros(d),
                    drift_offset: vec![0.0; d],
                    diffusion_matrices: diffusion,
                }
            }
            DynamicsSpec::BlackScholes {
                alpha,
                beta,
                sigma_rows,
            } => {
                let mut drift = zeros(d);
                for i in 0..d {
                    drift[i][i] = alpha[i];
                }
                // sigma(x)_{ij} = beta_i x_i Sigma_{ij}: only S_i has a nonzero row i
                let mut diffusion = vec![zeros(d)];
                for k in 0..d {
                    let mut s = zeros(d);
                    for j in 0..d {
                        s[k][j] = beta[k] * sigma_rows[k][j];
                    }
                    diffusion.push(s);
                }
                DynamicsSpec::GenericAffine {
                    drift_matrix: drift,
                    drift_offset: vec![0.0; d],
                    diffusion_matrices: diffusion,
                }
            }
            other => other.clone(),
        }
    }
}

/// Polynomial growth envelope `|phi(y)| <= c2 (1 + |y|_2^lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthEnvelope {
    pub c2: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Payoff {
    /// `sum_i c_i y_i^k`
    Polynomial { coeffs: Vec<f64>, degree: u32 },
    /// `max(sum_i c_i y_i - K, 0)`
    BasketCall { weights: Vec<f64>, strike: f64 },
    /// `max(max_i c_i y_i - K, 0)`
    CallOnMax { weights: Vec<f64>, strike: f64 },
}

impl Payoff {
    pub fn dim(&self) -> usize {
        match self {
            Payoff::Polynomial { coeffs, .. } => coeffs.len(),
            Payoff::BasketCall { weights, .. } | Payoff::CallOnMax { weights, .. } => weights.len(),
        }
    }

    /// Evaluates the payoff without a length check. Callers guarantee `y.len() == self.dim()`.
    #[inline]
    pub fn eval_unchecked(&self, y: &[f64]) -> f64 {
        match self {
            Payoff::Polynomial { coeffs, degree } => {
                let k = *degree as i32;
                coeffs.iter().zip(y).map(|(c, yi)| c * yi.powi(k)).sum()
            }
            Payoff::BasketCall { weights, strike } => {
                let s: f64 = weights.iter().zip(y).map(|(c, yi)| c * yi).sum();
                (s - strike).max(0.0)
            }
            Payoff::CallOnMax { weights, strike } => {
                let m = weights
                    .iter()
                    .zip(y)
                    .map(|(c, yi)| c * yi)
                    .fold(f64::NEG_INFINITY, f64::max);
                (m - strike).max(0.0)
            }
        }
    }

    /// Smallest exponent and a certified constant for the growth condition.
    pub fn default_envelope(&self) -> GrowthEnvelope {
        match self {
            Payoff::Polynomial { coeffs, degree } => {
                let cmax = coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
                GrowthEnvelope {
                    c2: (coeffs.len() as f64 * cmax).max(f64::MIN_POSITIVE),
                    lambda: (*degree as f64).max(2.0),
                }
            }
            Payoff::BasketCall { weights, strike } | Payoff::CallOnMax { weights, strike } => {
                let sum: f64 = weights.iter().sum();
                GrowthEnvelope {
                    c2: sum.max(1.0) + strike,
                    lambda: 2.0,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialFunction {
    #[serde(flatten)]
    pub payoff: Payoff,
    /// Optional override of the computed envelope.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthEnvelope>,
}

impl InitialFunction {
    pub fn new(payoff: Payoff) -> Self {
        Self {
            payoff,
            growth: None,
        }
    }

    pub fn polynomial(coeffs: Vec<f64>, degree: u32) -> Self {
        Self::new(Payoff::Polynomial { coeffs, degree })
    }

    pub fn basket_call(weights: Vec<f64>, strike: f64) -> Self {
        Self::new(Payoff::BasketCall { weights, strike })
    }

    pub fn call_on_max(weights: Vec<f64>, strike: f64) -> Self {
        Self::new(Payoff::CallOnMax { weights, strike })
    }

    pub fn envelope(&self) -> GrowthEnvelope {
        self.growth.unwrap_or_else(|| self.payoff.default_envelope())
    }

    pub fn dim(&self) -> usize {
        self.payoff.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeProblem {
    pub domain: HypercubeDomain,
    pub dynamics: DynamicsSpec,
    pub initial: InitialFunction,
    #[serde(rename = "horizon_T")]
    pub horizon: f64,
}

impl PdeProblem {
    pub fn heat_polynomial(u: f64, v: f64, horizon: f64, coeffs: Vec<f64>, degree: u32) -> Self {
        let d = coeffs.len();
        Self {
            domain: HypercubeDomain::new(u, v, d),
            dynamics: DynamicsSpec::Heat,
            initial: InitialFunction::polynomial(coeffs, degree),
            horizon,
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.d
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("problem serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        let v = validate_problem(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(KolmoError::InvalidProblem(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl Violation {
    fn new(field: &str, reason: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

/// Lists every broken invariant of `p`. An empty list means the problem is valid.
pub fn validate_problem(p: &PdeProblem) -> Vec<Violation> {
    let mut out = Vec::new();
    let dom = &p.domain;
    let d = dom.d;

    if d == 0 {
        out.push(Violation::new("domain.d", "dimension must be positive"));
    }
    if !(dom.u.is_finite() && dom.v.is_finite()) {
        out.push(Violation::new("domain", "edges must be finite"));
    } else if dom.u >= dom.v {
        out.push(Violation::new("domain", format!("u = {} must be < v = {}", dom.u, dom.v)));
    }
    if !(p.horizon.is_finite() && p.horizon > 0.0) {
        out.push(Violation::new("horizon_T", "horizon must be positive and finite"));
    }

    match &p.dynamics {
        DynamicsSpec::Heat => {}
        DynamicsSpec::BlackScholes {
            alpha,
            beta,
            sigma_rows,
        } => {
            if dom.u <= 0.0 {
                out.push(Violation::new(
                    "domain.u",
                    "Black-Scholes requires [u, v] inside (0, inf)",
                ));
            }
            check_len(&mut out, "dynamics.alpha", alpha.len(), d);
            check_len(&mut out, "dynamics.beta", beta.len(), d);
            check_len(&mut out, "dynamics.sigma_rows", sigma_rows.len(), d);
            if alpha.iter().chain(beta).any(|x| !x.is_finite()) {
                out.push(Violation::new("dynamics", "alpha/beta must be finite"));
            }
            for (i, row) in sigma_rows.iter().enumerate() {
                if row.len() != d {
                    out.push(Violation::new(
                        "dynamics.sigma_rows",
                        format!("sigma row {i} has length {} (expected {d})", row.len()),
                    ));
                    continue;
                }
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !((norm - 1.0).abs() <= SIGMA_ROW_TOL) {
                    out.push(Violation::new(
                        "dynamics.sigma_rows",
                        format!("sigma row norm ≠ 1 (row {i} has norm {norm})"),
                    ));
                }
            }
        }
        DynamicsSpec::GenericAffine {
            drift_matrix,
            drift_offset,
            diffusion_matrices,
        } => {
            check_square(&mut out, "dynamics.drift_matrix", drift_matrix, d);
            check_len(&mut out, "dynamics.drift_offset", drift_offset.len(), d);
            check_len(
                &mut out,
                "dynamics.diffusion_matrices",
                diffusion_matrices.len(),
                d + 1,
            );
            for m in diffusion_matrices {
                check_square(&mut out, "dynamics.diffusion_matrices", m, d);
            }
        }
    }

    let init = &p.initial;
    check_len(&mut out, "initial", init.dim(), d);
    match &init.payoff {
        Payoff::Polynomial { coeffs, degree } => {
            if *degree == 0 {
                out.push(Violation::new("initial.degree", "degree must be positive"));
            }
            if coeffs.iter().any(|c| !c.is_finite()) {
                out.push(Violation::new("initial.coeffs", "coefficients must be finite"));
            }
        }
        Payoff::BasketCall { weights, strike } => {
            if weights.iter().any(|c| !(0.0..=1.0).contains(c)) {
                out.push(Violation::new("initial.weights", "weights must lie in [0, 1]"));
            }
            let sum: f64 = weights.iter().sum();
            if (sum - 1.0).abs() > BASKET_SUM_TOL {
                out.push(Violation::new(
                    "initial.weights",
                    format!("weights do not sum to 1 (sum = {sum})"),
                ));
            }
            check_strike(&mut out, *strike);
        }
        Payoff::CallOnMax { weights, strike } => {
            if weights.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                out.push(Violation::new("initial.weights", "weights must be nonnegative"));
            }
            check_strike(&mut out, *strike);
        }
    }
    if let Some(env) = init.growth {
        if !(env.lambda >= 2.0) {
            out.push(Violation::new("initial.growth.lambda", "lambda must be >= 2"));
        }
        if !(env.c2 > 0.0) {
            out.push(Violation::new("initial.growth.c2", "c2 must be positive"));
        }
    }
    out
}

fn check_len(out: &mut Vec<Violation>, field: &str, got: usize, expected: usize) {
    if got != expected {
        out.push(Violation::new(
            field,
            format!("length {got} does not match dimension {expected}"),
        ));
    }
}

fn check_square(out: &mut Vec<Violation>, field: &str, m: &[Vec<f64>], d: usize) {
    if m.len() != d || m.iter().any(|r| r.len() != d) {
        out.push(Violation::new(field, format!("matrix must be {d}x{d}")));
    } else if m.iter().flatten().any(|x| !x.is_finite()) {
        out.push(Violation::new(field, "matrix entries must be finite"));
    }
}

fn check_strike(out: &mut Vec<Violation>, strike: f64) {
    if !(strike.is_finite() && strike > 0.0) {
        out.push(Violation::new("initial.strike", "strike must be positive"));
    }
}

pub fn evaluate_initial(phi: &InitialFunction, y: &[f64]) -> Result<f64> {
    if y.len() != phi.dim() {
        return Err(KolmoError::DimensionMismatch {
            expected: phi.dim(),
            got: y.len(),
        });
    }
    Ok(phi.payoff.eval_unchecked(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub pass: bool,
    /// `max |phi(y)| / (1 + |y|_2^lambda)` over the sample.
    pub worst_ratio: f64,
    pub worst_index: usize,
}

/// Checks the polynomial growth condition at every row of `points`.
pub fn growth_envelope_check(
    phi: &InitialFunction,
    env: GrowthEnvelope,
    points: ArrayView2<'_, f64>,
) -> Result<GrowthCheck> {
    if points.nrows() == 0 {
        return Err(KolmoError::invalid("growth check needs at least one point"));
    }
    if points.ncols() != phi.dim() {
        return Err(KolmoError::DimensionMismatch {
            expected: phi.dim(),
            got: points.ncols(),
        });
    }
    let mut pass = true;
    let mut worst_ratio = f64::NEG_INFINITY;
    let mut worst_index = 0;
    let mut buf = vec![0.0; phi.dim()];
    for (i, row) in points.rows().into_iter().enumerate() {
        buf.iter_mut().zip(row.iter()).for_each(|(b, r)| *b = *r);
        let value = phi.payoff.eval_unchecked(&buf).abs();
        let norm = buf.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = 1.0 + norm.powf(env.lambda);
        if value > env.c2 * denom {
            pass = false;
        }
        let ratio = value / denom;
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_index = i;
        }
    }
    Ok(GrowthCheck {
        pass,
        worst_ratio,
        worst_index,
    })
}

pub(crate) fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn zeros(d: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; d]; d]
}

//! Reference values of `f_d(·, T)`: closed forms where they exist, Monte Carlo
//! otherwise, plus L² estimation error and the risk-gap identity.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KolmoError, Result};
use crate::neural::Predictor;
use crate::pde_model::{DynamicsSpec, HypercubeDomain, Payoff, PdeProblem};
use crate::sde_sim::{sample_terminal, sample_uniform_inputs, splitmix64, EmConfig, RngStream};
use crate::stats::MeanEstimate;

pub const MIN_ORACLE_DRAWS: usize = 10_000;
const MC_CHUNK: usize = 1 << 16;

/// `E[Z^j]` for `Z ~ N(0, 1)`.
pub fn gaussian_raw_moment(j: u32) -> f64 {
    if j % 2 == 1 {
        return 0.0;
    }
    (1..j).step_by(2).map(|i| i as f64).product()
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `Σ_i c_i E[(x_i + √(2T) Z)^k]`, expanded exactly.
pub fn heat_polynomial_solution(coeffs: &[f64], degree: u32, horizon: f64, x: &[f64]) -> Result<f64> {
    if coeffs.len() != x.len() {
        return Err(KolmoError::DimensionMismatch {
            expected: coeffs.len(),
            got: x.len(),
        });
    }
    if !(horizon > 0.0) {
        return Err(KolmoError::invalid("horizon T must be positive"));
    }
    let s = (2.0 * horizon).sqrt();
    let terms: Vec<f64> = (0..=degree)
        .step_by(2)
        .map(|j| binomial(degree, j) * s.powi(j as i32) * gaussian_raw_moment(j))
        .collect();
    Ok(coeffs
        .iter()
        .zip(x)
        .map(|(c, xi)| {
            let e: f64 = (0..=degree)
                .step_by(2)
                .zip(&terms)
                .map(|(j, t)| t * xi.powi((degree - j) as i32))
                .sum();
            c * e
        })
        .sum())
}

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_5e3,
    1.857_777_061_846_031_5e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_1e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_170_6e3,
];
const ERF_C: [f64; 9] = [
    5.641_884_969_886_700_9e-1,
    8.883_149_794_388_375_9e0,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_691e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const ERF_D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_098_6e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_6e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_4e3,
];
const ERF_P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044_4e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_7e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const ERF_Q: [f64; 5] = [
    2.568_520_192_289_822_4e0,
    1.872_952_849_923_467_3e0,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Complementary error function by Cody's rational Chebyshev approximations
/// on `[0, 0.46875]`, `(0.46875, 4]` and `(4, ∞)`; relative error below 1e-15
/// on each interval.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= 0.468_75 {
        let ysq = y * y;
        let mut num = ERF_A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + ERF_A[i]) * ysq;
            den = (den + ERF_B[i]) * ysq;
        }
        return 1.0 - x * (num + ERF_A[3]) / (den + ERF_B[3]);
    }
    let tail = if y >= 26.543 {
        0.0
    } else {
        let r = if y <= 4.0 {
            let mut num = ERF_C[8] * y;
            let mut den = y;
            for i in 0..7 {
                num = (num + ERF_C[i]) * y;
                den = (den + ERF_D[i]) * y;
            }
            (num + ERF_C[7]) / (den + ERF_D[7])
        } else {
            let ysq = 1.0 / (y * y);
            let mut num = ERF_P[5] * ysq;
            let mut den = ysq;
            for i in 0..4 {
                num = (num + ERF_P[i]) * ysq;
                den = (den + ERF_Q[i]) * ysq;
            }
            let r = ysq * (num + ERF_P[4]) / (den + ERF_Q[4]);
            (FRAC_1_SQRT_PI - r) / y
        };
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    };
    if x < 0.0 {
        2.0 - tail
    } else {
        tail
    }
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `E[max(x e^{(α − β²/2)T + β√T Z} − K, 0)]`.
pub fn bs_call_1d(x: f64, strike: f64, alpha: f64, beta: f64, horizon: f64) -> Result<f64> {
    if !(x > 0.0 && strike > 0.0) {
        return Err(KolmoError::invalid("spot and strike must be positive"));
    }
    if !(horizon > 0.0) || !(beta >= 0.0) {
        return Err(KolmoError::invalid("need T > 0 and beta >= 0"));
    }
    let forward = x * (alpha * horizon).exp();
    if beta == 0.0 {
        return Ok((forward - strike).max(0.0));
    }
    let vol = beta * horizon.sqrt();
    let d1 = ((x / strike).ln() + (alpha + 0.5 * beta * beta) * horizon) / vol;
    let d2 = d1 - vol;
    Ok((forward * norm_cdf(d1) - strike * norm_cdf(d2)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub ci_halfwidth: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Monte Carlo estimate of `E[φ(Y) | X = x]` with a 99% CLT half-width.
pub fn mc_conditional_expectation(
    p: &PdeProblem,
    x: &[f64],
    n_oracle: usize,
    rng: &RngStream,
) -> Result<McEstimate> {
    if n_oracle < MIN_ORACLE_DRAWS {
        return Err(KolmoError::invalid(format!(
            "n_oracle must be at least {MIN_ORACLE_DRAWS}, got {n_oracle}"
        )));
    }
    if x.len() != p.dim() {
        return Err(KolmoError::DimensionMismatch {
            expected: p.dim(),
            got: x.len(),
        });
    }
    let em = EmConfig::default();
    let mut values = Vec::with_capacity(n_oracle);
    for (c, start) in (0..n_oracle).step_by(MC_CHUNK).enumerate() {
        let rows = MC_CHUNK.min(n_oracle - start);
        let xs = Array2::from_shape_fn((rows, x.len()), |(_, j)| x[j]);
        let ys = sample_terminal(p, xs.view(), &rng.split(c as u64), &em)?;
        values.extend(
            ys.rows()
                .into_iter()
                .map(|y| p.initial.payoff.eval_unchecked(y.as_slice().expect("contiguous row"))),
        );
    }
    let est = MeanEstimate::from_slice(&values);
    Ok(McEstimate {
        value: est.mean,
        ci_halfwidth: est.ci99(),
        std_error: est.std_error,
        n: n_oracle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ReferenceKind {
    ClosedFormHeatPoly,
    ClosedFormBsCall1d,
    MonteCarlo { n_oracle: usize, seed: u64 },
}

/// `f_d(·, T)` for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub kind: ReferenceKind,
    pub problem: PdeProblem,
}

impl ReferenceSolution {
    pub fn new(kind: ReferenceKind, problem: PdeProblem) -> Result<Self> {
        problem.validate()?;
        let ok = match &kind {
            ReferenceKind::ClosedFormHeatPoly => heat_poly_parts(&problem).is_some(),
            ReferenceKind::ClosedFormBsCall1d => bs_call_parts(&problem).is_some(),
            ReferenceKind::MonteCarlo { n_oracle, .. } => *n_oracle >= MIN_ORACLE_DRAWS,
        };
        if !ok {
            return Err(KolmoError::invalid(format!(
                "reference {kind:?} does not apply to this problem"
            )));
        }
        Ok(Self { kind, problem })
    }

    /// A closed form when one applies, Monte Carlo otherwise.
    pub fn auto(problem: PdeProblem, n_oracle: usize, seed: u64) -> Result<Self> {
        let kind = if heat_poly_parts(&problem).is_some() {
            ReferenceKind::ClosedFormHeatPoly
        } else if bs_call_parts(&problem).is_some() {
            ReferenceKind::ClosedFormBsCall1d
        } else {
            ReferenceKind::MonteCarlo { n_oracle, seed }
        };
        Self::new(kind, problem)
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self.kind, ReferenceKind::MonteCarlo { .. })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_with_ci(x)?.0)
    }

    /// Value and 99% half-width (zero for closed forms). Monte Carlo draws
    /// are keyed by the bits of `x`, so the map is a deterministic function.
    pub fn eval_with_ci(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.problem.dim() {
            return Err(KolmoError::DimensionMismatch {
                expected: self.problem.dim(),
                got: x.len(),
            });
        }
        match &self.kind {
            ReferenceKind::ClosedFormHeatPoly => {
                let (c, k) = heat_poly_parts(&self.problem).expect("checked at construction");
                Ok((heat_polynomial_solution(c, k, self.problem.horizon, x)?, 0.0))
            }
            ReferenceKind::ClosedFormBsCall1d => {
                let b = bs_call_parts(&self.problem).expect("checked at construction");
                let v = b.weight * bs_call_1d(x[0], b.strike / b.weight, b.alpha, b.beta, self.problem.horizon)?;
                Ok((v, 0.0))
            }
            ReferenceKind::MonteCarlo { n_oracle, seed } => {
                let key = x.iter().fold(0x6f72_6163_6c65u64, |h, v| splitmix64(h ^ v.to_bits()));
                let est = mc_conditional_expectation(&self.problem, x, *n_oracle, &RngStream::new(*seed, key))?;
                Ok((est.value, est.ci_halfwidth))
            }
        }
    }

    fn eval_many(&self, xs: &Array2<f64>) -> Result<Vec<f64>> {
        let rows: Vec<&[f64]> = xs
            .rows()
            .into_iter()
            .map(|r| r.to_slice().expect("contiguous row"))
            .collect();
        if self.is_closed_form() {
            rows.par_iter().map(|x| self.eval(x)).collect()
        } else {
            rows.iter().map(|x| self.eval(x)).collect()
        }
    }
}

fn heat_poly_parts(p: &PdeProblem) -> Option<(&[f64], u32)> {
    match (&p.dynamics, &p.initial.payoff) {
        (DynamicsSpec::Heat, Payoff::Polynomial { coeffs, degree }) => Some((coeffs, *degree)),
        _ => None,
    }
}

struct BsCallParts {
    weight: f64,
    strike: f64,
    alpha: f64,
    beta: f64,
}

fn bs_call_parts(p: &PdeProblem) -> Option<BsCallParts> {
    if p.dim() != 1 {
        return None;
    }
    let DynamicsSpec::BlackScholes { alpha, beta, sigma_rows } = &p.dynamics else {
        return None;
    };
    let (weight, strike) = match &p.initial.payoff {
        Payoff::BasketCall { weights, strike } | Payoff::CallOnMax { weights, strike } => {
            (weights[0], *strike)
        }
        _ => return None,
    };
    if !(weight > 0.0 && strike > 0.0 && p.domain.u > 0.0) {
        return None;
    }
    Some(BsCallParts {
        weight,
        strike,
        alpha: alpha[0],
        beta: beta[0].abs() * sigma_rows[0][0].abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `E[(f(X) − f_d(X, T))²]` over uniform `X`.
    pub l2_error_sq: f64,
    pub ci_halfwidth: f64,
    pub n_quadrature: usize,
    /// `E[(f(X) − φ(Y))²]` on the same draws.
    pub risk_estimate: f64,
    /// Sample mean of `(f − φ)² − (f_d − φ)² − (f − f_d)²`.
    pub risk_gap_residual: f64,
    pub reference_mean_sq: f64,
    /// `sqrt(l2_error_sq / reference_mean_sq)`.
    pub relative_l2_error: f64,
}

/// Monte Carlo quadrature of the squared L² distance to the reference under
/// the uniform law on the hypercube.
pub fn estimation_error_l2(
    f: &dyn Predictor,
    reference: &ReferenceSolution,
    domain: &HypercubeDomain,
    n_quadrature: usize,
    rng: &RngStream,
) -> Result<ErrorReport> {
    if domain.d != reference.problem.dim() {
        return Err(KolmoError::DimensionMismatch {
            expected: reference.problem.dim(),
            got: domain.d,
        });
    }
    let xs = sample_uniform_inputs(domain, n_quadrature, &rng.split(0))?;
    let refs = reference.eval_many(&xs)?;
    let preds: Vec<f64> = xs
        .rows()
        .into_iter()
        .map(|r| f.predict(r.to_slice().expect("contiguous row")))
        .collect();
    let ys = sample_terminal(&reference.problem, xs.view(), &rng.split(1), &EmConfig::default())?;
    let phis: Vec<f64> = ys
        .rows()
        .into_iter()
        .map(|y| reference.problem.initial.payoff.eval_unchecked(y.to_slice().expect("contiguous row")))
        .collect();

    let err = MeanEstimate::from_fn(n_quadrature, |i| (preds[i] - refs[i]).powi(2));
    let risk = MeanEstimate::from_fn(n_quadrature, |i| (preds[i] - phis[i]).powi(2));
    let gap = MeanEstimate::from_fn(n_quadrature, |i| 2.0 * (preds[i] - refs[i]) * (refs[i] - phis[i]));
    let ref_sq = MeanEstimate::from_fn(n_quadrature, |i| refs[i] * refs[i]);
    if !err.mean.is_finite() {
        return Err(KolmoError::NonFinite {
            what: "estimation error",
            row: 0,
            step: 0,
        });
    }
    Ok(ErrorReport {
        l2_error_sq: err.mean,
        ci_halfwidth: err.ci99(),
        n_quadrature,
        risk_estimate: risk.mean,
        risk_gap_residual: gap.mean,
        reference_mean_sq: ref_sq.mean,
        relative_l2_error: if ref_sq.mean > 0.0 {
            (err.mean / ref_sq.mean).sqrt()
        } else {
            f64::INFINITY
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskGapCheck {
    /// Estimate of `ℰ(f) − ℰ(f_d)`.
    pub lhs: f64,
    /// Estimate of `E[(f(X) − f_d(X, T))²]`.
    pub rhs: f64,
    /// `|lhs − rhs|`.
    pub residual: f64,
    /// Standard error of the paired difference.
    pub std_error: f64,
}

impl RiskGapCheck {
    pub fn within(&self, sigmas: f64) -> bool {
        self.residual <= sigmas * self.std_error
    }
}

/// Both sides of `ℰ(f) − ℰ(f_d) = E[(f − f_d)²]` on shared `(X, Y)` draws.
pub fn risk_gap_identity_check(
    f: &dyn Predictor,
    p: &PdeProblem,
    reference: &ReferenceSolution,
    n: usize,
    rng: &RngStream,
) -> Result<RiskGapCheck> {
    if reference.problem != *p {
        return Err(KolmoError::invalid("reference is bound to a different problem"));
    }
    let xs = sample_uniform_inputs(&p.domain, n, &rng.split(0))?;
    let ys = sample_terminal(p, xs.view(), &rng.split(1), &EmConfig::default())?;
    let refs = reference.eval_many(&xs)?;
    let preds: Vec<f64> = xs
        .rows()
        .into_iter()
        .map(|r| f.predict(r.to_slice().expect("contiguous row")))
        .collect();
    let phis: Vec<f64> = ys
        .rows()
        .into_iter()
        .map(|y| p.initial.payoff.eval_unchecked(y.to_slice().expect("contiguous row")))
        .collect();
    let lhs = MeanEstimate::from_fn(n, |i| (preds[i] - phis[i]).powi(2) - (refs[i] - phis[i]).powi(2));
    let rhs = MeanEstimate::from_fn(n, |i| (preds[i] - refs[i]).powi(2));
    let diff = MeanEstimate::from_fn(n, |i| 2.0 * (preds[i] - refs[i]) * (refs[i] - phis[i]));
    Ok(RiskGapCheck {
        lhs: lhs.mean,
        rhs: rhs.mean,
        residual: diff.mean.abs(),
        std_error: diff.std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{init_params, Architecture, ClippedNetwork, FnPredictor, InitScheme};
    use crate::pde_model::InitialFunction;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn gaussian_moments() {
        assert_eq!(gaussian_raw_moment(0), 1.0);
        assert_eq!(gaussian_raw_moment(1), 0.0);
        assert_eq!(gaussian_raw_moment(4), 3.0);
        assert_eq!(gaussian_raw_moment(6), 15.0);
        assert_eq!(gaussian_raw_moment(7), 0.0);
    }

    #[test]
    fn heat_solution_examples() {
        assert!(close(heat_polynomial_solution(&[1.0], 2, 0.5, &[0.0]).unwrap(), 1.0, 1e-15));
        assert!(close(
            heat_polynomial_solution(&[1.0, 1.0], 2, 0.5, &[1.0, 1.0]).unwrap(),
            4.0,
            1e-14
        ));
        let lin = heat_polynomial_solution(&[2.0, -3.0], 1, 7.0, &[0.4, 1.1]).unwrap();
        assert!(close(lin, 0.8 - 3.3, 1e-14));
        // k = 4: x⁴ + 6x²(2T) + 3(2T)²
        let v = heat_polynomial_solution(&[1.0], 4, 0.25, &[2.0]).unwrap();
        assert!(close(v, 16.0 + 6.0 * 4.0 * 0.5 + 3.0 * 0.25, 1e-12));
        assert!(heat_polynomial_solution(&[1.0], 2, 0.0, &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn heat_solution_tends_to_payoff(
            x in prop::collection::vec(-2.0f64..2.0, 1..5),
            k in 1u32..7,
        ) {
            let c: Vec<f64> = (0..x.len()).map(|i| 1.0 - 0.3 * i as f64).collect();
            let phi = Payoff::Polynomial { coeffs: c.clone(), degree: k }.eval_unchecked(&x);
            let v = heat_polynomial_solution(&c, k, 1e-15, &x).unwrap();
            prop_assert!((v - phi).abs() <= 1e-9 * phi.abs().max(1e-300) + 1e-12);
        }
    }

    #[test]
    fn normal_cdf_reference_values() {
        // 20-digit reference values
        let cases = [
            (-8.0, 6.220_960_574_271_784e-16),
            (-5.0, 2.866_515_718_791_939e-7),
            (-3.2, 6.871_379_379_158_48e-4),
            (-1.0, 0.158_655_253_931_457_05),
            (-0.3, 0.382_088_577_811_047_37),
            (0.0, 0.5),
            (0.25, 0.598_706_325_682_923_7),
            (0.5, 0.691_462_461_274_013_1),
            (1.5, 0.933_192_798_731_141_9),
            (2.9, 0.998_134_186_699_616),
            (4.5, 0.999_996_602_326_875_3),
            (7.0, 0.999_999_999_998_720_2),
        ];
        for (x, want) in cases {
            let got = norm_cdf(x);
            assert!((got - want).abs() <= 1e-15 + 1e-14 * want, "Φ({x}) = {got}, want {want}");
        }
        assert_eq!(norm_cdf(-40.0), 0.0);
        assert_eq!(norm_cdf(40.0), 1.0);
    }

    #[test]
    fn bs_call_examples() {
        assert_eq!(bs_call_1d(120.0, 100.0, 0.0, 0.0, 1.0).unwrap(), 20.0);
        // 100 (2Φ(0.1) − 1)
        let atm = bs_call_1d(100.0, 100.0, 0.0, 0.2, 1.0).unwrap();
        assert!(close(atm, 7.965_567_455_405_8, 1e-10), "{atm}");
        assert!(bs_call_1d(1e-12, 100.0, 0.0, 0.2, 1.0).unwrap() < 1e-300);
        assert!(bs_call_1d(0.0, 100.0, 0.0, 0.2, 1.0).is_err());
        assert!(bs_call_1d(100.0, -1.0, 0.0, 0.2, 1.0).is_err());
    }

    #[test]
    fn bs_call_monotone_on_grid() {
        for alpha in [-0.05, 0.0, 0.05] {
            for beta in [0.0, 0.1, 0.4] {
                let mut prev = 0.0;
                for i in 1..=200 {
                    let v = bs_call_1d(i as f64, 100.0, alpha, beta, 1.0).unwrap();
                    assert!(v >= prev - 1e-12, "x-monotonicity at {i}");
                    prev = v;
                }
                let mut prev = f64::INFINITY;
                for i in 1..=200 {
                    let v = bs_call_1d(100.0, i as f64, alpha, beta, 1.0).unwrap();
                    assert!(v <= prev + 1e-12, "K-monotonicity at {i}");
                    prev = v;
                }
            }
        }
    }

    fn bs_call_problem(alpha: f64, beta: f64, strike: f64, u: f64, v: f64) -> PdeProblem {
        PdeProblem {
            domain: HypercubeDomain::new(u, v, 1),
            dynamics: DynamicsSpec::black_scholes_uncorrelated(vec![alpha], vec![beta]),
            initial: InitialFunction::basket_call(vec![1.0], strike),
            horizon: 1.0,
        }
    }

    #[test]
    fn mc_matches_heat_closed_form() {
        let p = PdeProblem::heat_polynomial(0.0, 1.0, 0.5, vec![1.0], 2);
        let est = mc_conditional_expectation(&p, &[0.0], 1_000_000, &RngStream::new(1, 0)).unwrap();
        assert!((est.value - 1.0).abs() <= est.ci_halfwidth, "{est:?}");
    }

    #[test]
    fn mc_matches_bs_closed_form() {
        let p = bs_call_problem(0.0, 0.2, 100.0, 90.0, 110.0);
        let est = mc_conditional_expectation(&p, &[100.0], 1_000_000, &RngStream::new(2, 0)).unwrap();
        let exact = bs_call_1d(100.0, 100.0, 0.0, 0.2, 1.0).unwrap();
        assert!((est.value - exact).abs() <= est.ci_halfwidth, "{est:?} vs {exact}");
    }

    #[test]
    fn mc_is_exact_for_deterministic_dynamics() {
        let p = PdeProblem {
            domain: HypercubeDomain::new(1.0, 2.0, 2),
            dynamics: DynamicsSpec::black_scholes_uncorrelated(vec![0.1, 0.0], vec![0.0, 0.0]),
            initial: InitialFunction::basket_call(vec![0.5, 0.5], 1.0),
            horizon: 2.0,
        };
        let x = [1.5, 1.2];
        let est = mc_conditional_expectation(&p, &x, 20_000, &RngStream::new(0, 0)).unwrap();
        let y = [1.5 * (0.2f64).exp(), 1.2];
        assert_eq!(est.value, p.initial.payoff.eval_unchecked(&y));
        assert_eq!(est.ci_halfwidth, 0.0);
    }

    #[test]
    fn mc_rejects_small_n() {
        let p = PdeProblem::heat_polynomial(0.0, 1.0, 0.5, vec![1.0], 2);
        assert!(mc_conditional_expectation(&p, &[0.0], 9_999, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn mc_half_width_scales_as_inverse_root_n() {
        let p = PdeProblem::heat_polynomial(0.0, 1.0, 0.5, vec![1.0], 2);
        let a = mc_conditional_expectation(&p, &[0.3], 50_000, &RngStream::new(4, 0)).unwrap();
        let b = mc_conditional_expectation(&p, &[0.3], 200_000, &RngStream::new(4, 1)).unwrap();
        let ratio = b.ci_halfwidth / a.ci_halfwidth;
        assert!((ratio - 0.5).abs() <= 0.1, "{ratio}");
    }

    #[test]
    fn reference_binding() {
        let heat = PdeProblem::heat_polynomial(0.0, 1.0, 0.5, vec![1.0], 2);
        assert!(ReferenceSolution::new(ReferenceKind::ClosedFormBsCall1d, heat.clone()).is_err());
        assert!(ReferenceSolution::new(ReferenceKind::MonteCarlo { n_oracle: 10, seed: 0 }, heat.clone()).is_err());
        let r = ReferenceSolution::auto(heat, 10_000, 0).unwrap();
        assert_eq!(r.kind, ReferenceKind::ClosedFormHeatPoly);
        let bs = bs_call_problem(0.05, 0.2, 1.5, 1.0, 2.0);
        let r = ReferenceSolution::auto(bs.clone(), 10_000, 0).unwrap();
        assert_eq!(r.kind, ReferenceKind::ClosedFormBsCall1d);
        let mc = ReferenceSolution::new(ReferenceKind::MonteCarlo { n_oracle: 200_000, seed: 3 }, bs).unwrap();
        let (v, ci) = mc.eval_with_ci(&[1.7]).unwrap();
        assert!((v - r.eval(&[1.7]).unwrap()).abs() <= ci);
        assert_eq!(mc.eval(&[1.7]).unwrap(), v);
    }

    #[test]
    fn weighted_call_closed_form() {
        let p = PdeProblem {
            initial: InitialFunction::call_on_max(vec![2.0], 3.0),
            ..bs_call_problem(0.05, 0.2, 1.0, 1.0, 2.0)
        };
        let r = ReferenceSolution::auto(p.clone(), 10_000, 0).unwrap();
        assert_eq!(r.kind, ReferenceKind::ClosedFormBsCall1d);
        let est = mc_conditional_expectation(&p, &[1.6], 400_000, &RngStream::new(9, 0)).unwrap();
        assert!((est.value - r.eval(&[1.6]).unwrap()).abs() <= est.ci_halfwidth);
    }

    fn heat_setup() -> (PdeProblem, ReferenceSolution) {
        let p = PdeProblem::heat_polynomial(0.0, 1.0, 0.5, vec![1.0], 2);
        let r = ReferenceSolution::auto(p.clone(), 10_000, 0).unwrap();
        (p, r)
    }

    #[test]
    fn l2_error_of_reference_and_offset() {
        let (p, r) = heat_setup();
        let exact = FnPredictor(|x: &[f64]| x[0] * x[0] + 1.0);
        let e = estimation_error_l2(&exact, &r, &p.domain, 10_000, &RngStream::new(1, 0)).unwrap();
        assert_eq!(e.l2_error_sq, 0.0);
        assert_eq!(e.ci_halfwidth, 0.0);
        let shifted = FnPredictor(|x: &[f64]| x[0] * x[0] + 2.0);
        let e = estimation_error_l2(&shifted, &r, &p.domain, 10_000, &RngStream::new(1, 0)).unwrap();
        assert!((e.l2_error_sq - 1.0).abs() <= 1e-12 && e.ci_halfwidth <= 1e-12);
        // E[(x²+1)²] over U[0,1] = 1/5 + 2/3 + 1
        let zero = FnPredictor(|_: &[f64]| 0.0);
        let e = estimation_error_l2(&zero, &r, &p.domain, 200_000, &RngStream::new(1, 0)).unwrap();
        assert!((e.l2_error_sq - 28.0 / 15.0).abs() <= e.ci_halfwidth);
        assert!((e.relative_l2_error - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l2_error_is_consistent_across_n() {
        let (p, r) = heat_setup();
        let arch = Architecture::new(vec![1, 8, 1]).unwrap();
        let net = ClippedNetwork::new(
            arch.clone(),
            init_params(&arch, InitScheme::HeUniform, &RngStream::new(5, 0)),
            5.0,
            1.0,
        )
        .unwrap();
        let small = estimation_error_l2(&net, &r, &p.domain, 20_000, &RngStream::new(1, 0)).unwrap();
        let large = estimation_error_l2(&net, &r, &p.domain, 200_000, &RngStream::new(2, 0)).unwrap();
        let joint = (small.ci_halfwidth.powi(2) + large.ci_halfwidth.powi(2)).sqrt();
        assert!((small.l2_error_sq - large.l2_error_sq).abs() <= joint);
    }

    #[test]
    fn risk_gap_for_reference_is_exactly_zero() {
        let (p, r) = heat_setup();
        let exact = FnPredictor(|x: &[f64]| x[0] * x[0] + 1.0);
        let c = risk_gap_identity_check(&exact, &p, &r, 10_000, &RngStream::new(3, 0)).unwrap();
        assert_eq!(c.residual, 0.0);
        assert!(c.within(4.0));
    }

    #[test]
    fn risk_gap_for_zero_and_shifted_predictors() {
        let (p, r) = heat_setup();
        let zero = FnPredictor(|_: &[f64]| 0.0);
        let c = risk_gap_identity_check(&zero, &p, &r, 1_000_000, &RngStream::new(3, 0)).unwrap();
        assert!(c.within(4.0), "{c:?}");
        assert!((c.rhs - 28.0 / 15.0).abs() < 0.01);
        let shifted = FnPredictor(|x: &[f64]| x[0] * x[0] + 1.5);
        let c = risk_gap_identity_check(&shifted, &p, &r, 200_000, &RngStream::new(4, 0)).unwrap();
        assert!(c.within(4.0), "{c:?}");
        assert_eq!(c.rhs, 0.25);
    }

    #[test]
    fn risk_gap_holds_for_random_nets() {
        let (p, r) = heat_setup();
        let arch = Architecture::new(vec![1, 6, 6, 1]).unwrap();
        let mut passed = 0;
        for s in 0..20 {
            let net = ClippedNetwork::new(
                arch.clone(),
                init_params(&arch, InitScheme::HeUniform, &RngStream::new(s, 0)),
                4.0,
                1.0,
            )
            .unwrap();
            let c = risk_gap_identity_check(&net, &p, &r, 50_000, &RngStream::new(100 + s, 0)).unwrap();
            passed += c.within(4.0) as usize;
        }
        assert_eq!(passed, 20);
    }

    #[test]
    fn bias_variance_difference_form() {
        let (p, r) = heat_setup();
        let f = FnPredictor(|x: &[f64]| 0.5 * x[0]);
        let g = FnPredictor(|x: &[f64]| 1.0 + x[0] * x[0] * 0.8);
        let n = 200_000;
        let rng = RngStream::new(6, 0);
        let xs = sample_uniform_inputs(&p.domain, n, &rng.split(0)).unwrap();
        let ys = sample_terminal(&p, xs.view(), &rng.split(1), &EmConfig::default()).unwrap();
        let refs = r.eval_many(&xs).unwrap();
        let terms: Vec<f64> = (0..n)
            .map(|i| {
                let x = xs.row(i).to_vec();
                let phi = ys[[i, 0]].powi(2);
                let (fv, gv) = (f.predict(&x), g.predict(&x));
                ((fv - phi).powi(2) - (gv - phi).powi(2)) - ((fv - refs[i]).powi(2) - (gv - refs[i]).powi(2))
            })
            .collect();
        let est = MeanEstimate::from_slice(&terms);
        assert!(est.mean.abs() <= 4.0 * est.std_error, "{est:?}");
    }
}

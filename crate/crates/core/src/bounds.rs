//! Explicit thresholds behind the generalization bound, together with
//! empirical estimators for the tail constant `c1` and the moments `M_{k,d}`.
//!
//! All logarithms are natural.

use std::f64::consts::E;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{KolmoError, Result};
use crate::neural::Architecture;
use crate::pde_model::PdeProblem;
use crate::sde_sim::{make_dataset, RngStream};
use crate::stats::{linear_fit, MeanEstimate};

/// Smallest and largest `m` visited by [`combined_m_threshold`].
pub const M_SEARCH_LO: u64 = 2;
pub const M_SEARCH_HI: u64 = 1 << 60;
/// Minimum sample rows for the empirical estimators.
pub const MIN_EMPIRICAL_ROWS: usize = 100_000;
/// Minimum usable grid points for a tail fit.
pub const MIN_TAIL_GRID: usize = 8;
/// Deflation applied to the least-squares tail constant.
pub const TAIL_SAFETY: f64 = 0.9;

/// `P(a)[ln(4 L(a)² max{1,|u|,|v|} / r) + L(a) ln(R ‖a‖_∞)]`
pub fn covering_log_bound(arch: &Architecture, param_bound_r: f64, radius: f64, u: f64, v: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(KolmoError::invalid("covering radius must be positive"));
    }
    if !(param_bound_r > 0.0) {
        return Err(KolmoError::invalid("R must be positive"));
    }
    let p = arch.param_count() as f64;
    let l = arch.depth() as f64;
    let w = arch.width() as f64;
    let scale = 1f64.max(u.abs()).max(v.abs());
    Ok(p * ((4.0 * l * l * scale / radius).ln() + l * (param_bound_r * w).ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub arch: Architecture,
    #[serde(rename = "R")]
    pub param_bound_r: f64,
    #[serde(rename = "D")]
    pub clip_d: f64,
    pub u: f64,
    pub v: f64,
    pub eps: f64,
    pub rho: f64,
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(rename = "B_dK", default, skip_serializing_if = "Option::is_none")]
    pub b_dk: Option<f64>,
    #[serde(rename = "M4d", default, skip_serializing_if = "Option::is_none")]
    pub m4d: Option<f64>,
    /// Truncation level used for `B_{d,K}` when that is not given directly.
    #[serde(rename = "truncation_K", default, skip_serializing_if = "Option::is_none")]
    pub truncation_k: Option<f64>,
}

impl BoundInputs {
    pub fn dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.eps) {
            return Err(KolmoError::invalid("eps must lie in (0, 1)"));
        }
        if !unit(self.rho) {
            return Err(KolmoError::invalid("rho must lie in (0, 1)"));
        }
        if !(self.lambda >= 2.0) {
            return Err(KolmoError::invalid("lambda must be at least 2"));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(KolmoError::invalid("c1 and c2 must be positive"));
        }
        if !(self.clip_d > 0.0 && self.param_bound_r > 0.0) {
            return Err(KolmoError::invalid("D and R must be positive"));
        }
        if !(self.u < self.v) {
            return Err(KolmoError::invalid("need u < v"));
        }
        for (name, val) in [("B_dK", self.b_dk), ("M4d", self.m4d), ("truncation_K", self.truncation_k)] {
            if let Some(x) = val {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(KolmoError::invalid(format!("{name} must be positive")));
                }
            }
        }
        Ok(())
    }

    /// `c2 (d^{λ/2} K^λ + 1)`
    pub fn b_from_k(&self, k: f64) -> f64 {
        let d = self.dim() as f64;
        self.c2 * (d.powf(self.lambda / 2.0) * k.powf(self.lambda) + 1.0)
    }

    /// `B_{d,K}` from the explicit value, the configured `K`, or the
    /// truncation diameter, in that order.
    pub fn resolve_b(&self) -> Result<f64> {
        if let Some(b) = self.b_dk {
            return Ok(b);
        }
        let k = match self.truncation_k {
            Some(k) => k,
            None => self.resolve_k()?,
        };
        Ok(self.b_from_k(k))
    }

    fn resolve_k(&self) -> Result<f64> {
        if let Some(k) = self.truncation_k {
            return Ok(k);
        }
        let m4d = self
            .m4d
            .ok_or_else(|| KolmoError::invalid("either B_dK, truncation_K or M4d is required"))?;
        truncation_diameter(self.eps, self.dim(), self.clip_d, self.c1, m4d)
    }
}

fn sample_size_with(inputs: &BoundInputs, b: f64, eps: f64, rho: f64) -> Result<f64> {
    let d = inputs.clip_d;
    let radius = eps / (16.0 * (d + b));
    let cov = covering_log_bound(&inputs.arch, inputs.param_bound_r, radius, inputs.u, inputs.v)?;
    Ok(32.0 * (b * b + d * d).powi(2) * ((2.0 / rho).ln() + cov))
}

/// `32(B² + D²)² [ln(2/ϱ) + ln Cov(N_{a,R,D}, ε / (16(D + B)))]`
pub fn sample_size_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    sample_size_with(inputs, inputs.resolve_b()?, inputs.eps, inputs.rho)
}

/// `exp{√(2/c1 · ln[(2D² + 2√M4d) √(2d) / ε])}`, at least 1.
pub fn truncation_diameter(eps: f64, d: usize, clip_d: f64, c1: f64, m4d: f64) -> Result<f64> {
    if !(eps > 0.0 && clip_d > 0.0 && c1 > 0.0 && m4d >= 0.0 && d >= 1) {
        return Err(KolmoError::invalid("truncation_diameter needs positive inputs"));
    }
    let arg = (2.0 * clip_d * clip_d + 2.0 * m4d.sqrt()) / eps * (2.0 * d as f64).sqrt();
    Ok((2.0 / c1 * arg.ln().max(0.0)).sqrt().exp())
}

/// `2md exp{−c1 (ln K)²}`
pub fn g3_prob_bound(m: f64, d: usize, k: f64, c1: f64) -> Result<f64> {
    if !(k >= 1.0) {
        return Err(KolmoError::invalid("K must be at least 1"));
    }
    Ok(2.0 * m * d as f64 * (-c1 * k.ln().powi(2)).exp())
}

/// `(c1 / 36λ²)(ln m)² − ln m ≥ ln d + ln(6/ϱ)`
pub fn condition3_holds(m: u64, c1: f64, lambda: f64, d: usize, rho: f64) -> bool {
    let lm = (m as f64).ln();
    c1 / (36.0 * lambda * lambda) * lm * lm - lm >= (d as f64).ln() + (6.0 / rho).ln()
}

/// Smallest `m ≥ 2` satisfying the third condition alone; `ϱ` may exceed 1 here.
pub fn condition3_min_m(c1: f64, lambda: f64, d: usize, rho: f64) -> Result<u64> {
    if !(c1 > 0.0 && lambda > 0.0 && rho > 0.0 && d >= 1) {
        return Err(KolmoError::invalid("condition3 needs positive c1, lambda, rho and d"));
    }
    min_m_satisfying(|m| condition3_holds(m, c1, lambda, d, rho))
}

/// Doubling from [`M_SEARCH_LO`] then bisection; assumes the predicate is
/// monotone in `m` on the searched range.
fn min_m_satisfying<F: Fn(u64) -> bool>(pred: F) -> Result<u64> {
    if pred(M_SEARCH_LO) {
        return Ok(M_SEARCH_LO);
    }
    let mut lo = M_SEARCH_LO;
    let mut hi = M_SEARCH_LO * 2;
    while !pred(hi) {
        if hi >= M_SEARCH_HI {
            return Err(KolmoError::Infeasible {
                lo: M_SEARCH_LO,
                hi: M_SEARCH_HI,
            });
        }
        lo = hi;
        hi *= 2;
    }
    // pred(lo) false, pred(hi) true
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedThreshold {
    pub m: u64,
    /// `K = m^{1/(6λ)}`
    #[serde(rename = "K")]
    pub k: f64,
    pub sample_size_ok: bool,
    pub truncation_ok: bool,
    pub condition3_ok: bool,
}

impl CombinedThreshold {
    pub fn all_hold(&self) -> bool {
        self.sample_size_ok && self.truncation_ok && self.condition3_ok
    }
}

struct CombinedConditions<'a> {
    inputs: &'a BoundInputs,
    m4d: f64,
}

impl CombinedConditions<'_> {
    fn check(&self, m: u64) -> Result<CombinedThreshold> {
        let i = self.inputs;
        let mf = m as f64;
        let k = mf.powf(1.0 / (6.0 * i.lambda));
        let need = sample_size_with(i, i.b_from_k(k), i.eps / 6.0, i.rho / 3.0)?;
        let k_min = truncation_diameter(i.eps / 6.0, i.dim(), i.clip_d, i.c1, self.m4d)?;
        Ok(CombinedThreshold {
            m,
            k,
            sample_size_ok: mf >= need,
            truncation_ok: k >= k_min,
            condition3_ok: condition3_holds(m, i.c1, i.lambda, i.dim(), i.rho),
        })
    }
}

/// Smallest `m` such that, with `K = m^{1/(6λ)}` and `B = c2(d^{λ/2}K^λ + 1)`,
/// the sample-size threshold holds at `(ε/6, ϱ/3)`, `K` exceeds the truncation
/// diameter at `ε/6`, and the third condition holds. Requires `M4d`.
pub fn combined_m_threshold(inputs: &BoundInputs) -> Result<CombinedThreshold> {
    inputs.validate()?;
    let m4d = inputs
        .m4d
        .ok_or_else(|| KolmoError::invalid("combined threshold requires M4d"))?;
    let conds = CombinedConditions { inputs, m4d };
    let m = min_m_satisfying(|m| conds.check(m).map(|c| c.all_hold()).unwrap_or(false))?;
    let out = conds.check(m)?;
    debug_assert!(out.all_hold());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub covering_log: f64,
    pub m_truncated: f64,
    #[serde(rename = "K_truncation")]
    pub k_truncation: f64,
    pub g3_prob: f64,
    /// `None` when `M4d` is missing or the search range is exhausted.
    pub m_combined: Option<f64>,
}

/// Every threshold for one input set. `K_truncation` needs `truncation_K` or `M4d`.
pub fn bound_report(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let k = inputs.resolve_k()?;
    let b = match inputs.b_dk {
        Some(b) => b,
        None => inputs.b_from_k(k),
    };
    let radius = inputs.eps / (16.0 * (inputs.clip_d + b));
    let covering_log = covering_log_bound(&inputs.arch, inputs.param_bound_r, radius, inputs.u, inputs.v)?;
    let m_truncated = sample_size_with(inputs, b, inputs.eps, inputs.rho)?;
    let g3_prob = g3_prob_bound(m_truncated.ceil(), inputs.dim(), k, inputs.c1)?;
    let m_combined = if inputs.m4d.is_some() {
        match combined_m_threshold(inputs) {
            Ok(c) => Some(c.m as f64),
            Err(KolmoError::Infeasible { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(BoundReport {
        covering_log,
        m_truncated,
        k_truncation: k,
        g3_prob,
        m_combined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailParams {
    /// Deflated estimate `0.9 · c1_raw`.
    pub c1: f64,
    pub c1_raw: f64,
    /// R² of the fit `ln(P/2) ≈ −c1 (ln t)²`.
    pub fit_quality: f64,
    pub n_fit: usize,
    pub pass: bool,
    /// Grid points where `P(|Y| ≥ t) > 2 exp{−c1 (ln t)²}`.
    pub violations: Vec<f64>,
}

fn pooled_sorted_abs(samples: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if samples.nrows() < MIN_EMPIRICAL_ROWS {
        return Err(KolmoError::invalid(format!(
            "tail fitting needs at least {MIN_EMPIRICAL_ROWS} rows, got {}",
            samples.nrows()
        )));
    }
    let mut abs: Vec<f64> = samples.iter().map(|v| v.abs()).collect();
    if abs.iter().any(|v| v.is_nan()) {
        return Err(KolmoError::invalid("samples contain NaN"));
    }
    abs.sort_unstable_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(abs)
}

fn exceedance(sorted: &[f64], t: f64) -> f64 {
    let below = sorted.partition_point(|v| *v < t);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

/// `n_points` geometric points from `e` to the largest `t` still exceeded by
/// at least `min_exceedances` pooled samples.
pub fn default_tail_grid(samples: ArrayView2<'_, f64>, n_points: usize, min_exceedances: usize) -> Result<Vec<f64>> {
    let sorted = pooled_sorted_abs(samples)?;
    tail_grid_from_sorted(&sorted, n_points, min_exceedances)
}

fn tail_grid_from_sorted(sorted: &[f64], n_points: usize, min_exceedances: usize) -> Result<Vec<f64>> {
    if n_points < 2 || min_exceedances == 0 || min_exceedances > sorted.len() {
        return Err(KolmoError::invalid("tail grid needs n_points ≥ 2 and 1 ≤ min_exceedances ≤ n"));
    }
    let t_max = sorted[sorted.len() - min_exceedances];
    if !(t_max > E) {
        return Err(KolmoError::EmptyGrid);
    }
    let ratio = (t_max / E).ln() / (n_points - 1) as f64;
    Ok((0..n_points).map(|i| E * (ratio * i as f64).exp()).collect())
}

/// Least-squares fit through the origin of `ln(P(|Y_i| ≥ t)/2) = −c1 (ln t)²`
/// over grid points `t ∈ [e, max|Y|)` with positive exceedance, pooling all
/// coordinates.
pub fn fit_tail_constant(samples: ArrayView2<'_, f64>, t_grid: &[f64]) -> Result<TailParams> {
    let sorted = pooled_sorted_abs(samples)?;
    fit_tail_sorted(&sorted, t_grid)
}

fn fit_tail_sorted(sorted: &[f64], t_grid: &[f64]) -> Result<TailParams> {
    let t_top = *sorted.last().expect("nonempty");
    let pts: Vec<(f64, f64)> = t_grid
        .iter()
        .copied()
        .filter(|t| *t >= E && *t < t_top)
        .map(|t| (t, exceedance(sorted, t)))
        .filter(|(_, p)| *p > 0.0)
        .collect();
    if pts.is_empty() {
        return Err(KolmoError::EmptyGrid);
    }
    if pts.len() < MIN_TAIL_GRID {
        return Err(KolmoError::invalid(format!(
            "tail fit needs at least {MIN_TAIL_GRID} usable grid points, got {}",
            pts.len()
        )));
    }
    let xs: Vec<f64> = pts.iter().map(|(t, _)| t.ln().powi(2)).collect();
    let ys: Vec<f64> = pts.iter().map(|(_, p)| (p / 2.0).ln()).collect();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let c1_raw = -sxy / sxx;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y + c1_raw * x).powi(2)).sum();
    let fit_quality = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let c1 = TAIL_SAFETY * c1_raw;
    let violations: Vec<f64> = pts
        .iter()
        .zip(&xs)
        .filter(|((_, p), x)| *p > 2.0 * (-c1 * *x).exp())
        .map(|((t, _), _)| *t)
        .collect();
    Ok(TailParams {
        c1,
        c1_raw,
        fit_quality,
        n_fit: pts.len(),
        pass: c1 > 0.0 && violations.is_empty(),
        violations,
    })
}

/// [`fit_tail_constant`] on the grid from [`default_tail_grid`] with 16 points
/// and 100 exceedances.
pub fn fit_tail_default(samples: ArrayView2<'_, f64>) -> Result<TailParams> {
    let sorted = pooled_sorted_abs(samples)?;
    let grid = tail_grid_from_sorted(&sorted, 16, 100)?;
    fit_tail_sorted(&sorted, &grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub d: usize,
    pub m_hat: f64,
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentGrowth {
    pub k: u32,
    pub points: Vec<MomentPoint>,
    /// Least-squares slope of `ln M̂` against `ln d`.
    pub slope: f64,
    pub r_squared: f64,
}

/// `M̂_{k,d} = mean |φ|^k` for payoff draws produced by `sampler(d, n, rng)`.
pub fn moment_growth_from_sampler<S>(sampler: S, d_list: &[usize], k: u32, n: usize, seed: u64) -> Result<MomentGrowth>
where
    S: Fn(usize, usize, &RngStream) -> Result<Vec<f64>>,
{
    if n < MIN_EMPIRICAL_ROWS {
        return Err(KolmoError::invalid(format!(
            "moment estimation needs at least {MIN_EMPIRICAL_ROWS} draws per d"
        )));
    }
    let mut distinct = d_list.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 || distinct[0] == 0 {
        return Err(KolmoError::invalid("need at least two distinct positive dimensions"));
    }
    let mut points = Vec::with_capacity(d_list.len());
    for &d in d_list {
        let phis = sampler(d, n, &RngStream::new(seed, d as u64))?;
        let est = MeanEstimate::from_fn(phis.len(), |i| phis[i].abs().powi(k as i32));
        if !(est.mean > 0.0 && est.mean.is_finite()) {
            return Err(KolmoError::NonFinite {
                what: "moment estimate",
                row: d,
                step: 0,
            });
        }
        points.push(MomentPoint {
            d,
            m_hat: est.mean,
            ci_halfwidth: est.ci99(),
        });
    }
    let lx: Vec<f64> = points.iter().map(|p| (p.d as f64).ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.m_hat.ln()).collect();
    let fit = linear_fit(&lx, &ly);
    Ok(MomentGrowth {
        k,
        points,
        slope: fit.slope,
        r_squared: fit.r_squared,
    })
}

/// [`moment_growth_from_sampler`] over the labels of `family(d)`.
pub fn moment_growth_estimate<F>(family: F, d_list: &[usize], k: u32, n: usize, seed: u64) -> Result<MomentGrowth>
where
    F: Fn(usize) -> PdeProblem,
{
    moment_growth_from_sampler(
        |d, n, rng| {
            let p = family(d);
            Ok(make_dataset(&p, n, rng)?.labels)
        },
        d_list,
        k,
        n,
        seed,
    )
}

/// Monte Carlo estimate of `M_{4,d}` inflated by four standard errors.
pub fn estimate_m4d(p: &PdeProblem, n: usize, rng: &RngStream) -> Result<f64> {
    if n < MIN_EMPIRICAL_ROWS {
        return Err(KolmoError::invalid(format!("M4d estimation needs at least {MIN_EMPIRICAL_ROWS} draws")));
    }
    let labels = make_dataset(p, n, rng)?.labels;
    let est = MeanEstimate::from_fn(n, |i| labels[i].powi(4));
    Ok(est.mean + 4.0 * est.std_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde_model::{DynamicsSpec, HypercubeDomain, InitialFunction};
    use crate::sde_sim::sample_terminal;
    use crate::sde_sim::{sample_uniform_inputs, EmConfig};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    fn arch(s: &[usize]) -> Architecture {
        Architecture::new(s.to_vec()).unwrap()
    }

    fn base_inputs() -> BoundInputs {
        BoundInputs {
            arch: arch(&[1, 2, 1]),
            param_bound_r: 1.0,
            clip_d: 1.0,
            u: 0.0,
            v: 1.0,
            eps: 0.5,
            rho: 0.1,
            lambda: 2.0,
            c1: 1.0,
            c2: 1.0,
            b_dk: Some(1.0),
            m4d: None,
            truncation_k: None,
        }
    }

    #[test]
    fn covering_log_hand_value() {
        let a = arch(&[1, 2, 1]);
        let v = covering_log_bound(&a, 1.0, 1.0, 0.0, 1.0).unwrap();
        let hand = 7.0 * (16f64.ln() + 2.0 * 2f64.ln());
        assert!(rel_close(v, hand, 1e-12));
        assert!((v - 29.112).abs() < 1e-3);
        assert!(covering_log_bound(&a, 1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn covering_log_additivity() {
        let a = arch(&[3, 5, 4, 1]);
        let (p, l) = (a.param_count() as f64, a.depth() as f64);
        let base = covering_log_bound(&a, 2.0, 0.1, -1.0, 3.0).unwrap();
        let double_r = covering_log_bound(&a, 4.0, 0.1, -1.0, 3.0).unwrap();
        assert!(rel_close(double_r - base, p * l * 2f64.ln(), 1e-12));
        let half_r = covering_log_bound(&a, 2.0, 0.05, -1.0, 3.0).unwrap();
        assert!(rel_close(half_r - base, p * 2f64.ln(), 1e-12));
    }

    #[test]
    fn covering_log_monotone_in_architecture() {
        let mut prev = 0.0;
        for w in 1..20 {
            let v = covering_log_bound(&arch(&[2, w, w, 1]), 1.5, 0.01, 0.0, 1.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        let mut prev = 0.0;
        for depth in 1..8 {
            let v = covering_log_bound(&Architecture::uniform(2, 4, depth).unwrap(), 1.5, 0.01, 0.0, 1.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn sample_size_hand_chain() {
        let inputs = base_inputs();
        let r: f64 = 0.5 / 32.0;
        assert_eq!(r, 0.015_625);
        let cov = 7.0 * ((16.0 / r).ln() + 2.0 * 2f64.ln());
        assert!((cov - 58.22).abs() < 0.01);
        let hand = 128.0 * (20f64.ln() + cov);
        let m = sample_size_bound(&inputs).unwrap();
        assert!(rel_close(m, hand, 1e-12));
        assert!((m - 7836.0).abs() < 1.0, "{m}");
    }

    #[test]
    fn sample_size_monotonicity_scan() {
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let rho = i as f64 / 100.0;
            let m = sample_size_bound(&BoundInputs { rho, ..base_inputs() }).unwrap();
            assert!(m <= prev);
            prev = m;
        }
        let mut prev = 0.0;
        for i in 1..60 {
            let b = 0.1 * i as f64;
            let m = sample_size_bound(&BoundInputs { b_dk: Some(b), ..base_inputs() }).unwrap();
            assert!(m >= prev);
            prev = m;
        }
        let mut prev = 0.0;
        for i in 1..60 {
            let d = 0.1 * i as f64;
            let m = sample_size_bound(&BoundInputs { clip_d: d, ..base_inputs() }).unwrap();
            assert!(m >= prev);
            prev = m;
        }
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let eps = i as f64 / 100.0;
            let m = sample_size_bound(&BoundInputs { eps, ..base_inputs() }).unwrap();
            assert!(m <= prev);
            prev = m;
        }
        assert!(sample_size_bound(&BoundInputs { eps: 1.0, ..base_inputs() }).is_err());
        assert!(sample_size_bound(&BoundInputs { rho: 0.0, ..base_inputs() }).is_err());
    }

    #[test]
    fn b_from_truncation_level() {
        let inputs = BoundInputs {
            arch: arch(&[4, 3, 1]),
            b_dk: None,
            truncation_k: Some(2.0),
            c2: 1.5,
            ..base_inputs()
        };
        // c2 (d^{λ/2} K^λ + 1) = 1.5 (4 · 4 + 1)
        assert_eq!(inputs.resolve_b().unwrap(), 25.5);
        let no_k = BoundInputs { b_dk: None, ..base_inputs() };
        assert!(sample_size_bound(&no_k).is_err());
    }

    #[test]
    fn truncation_diameter_hand_value() {
        let k = truncation_diameter(0.5, 1, 1.0, 1.0, 1.0).unwrap();
        let hand = (2.0 * (8.0 * 2f64.sqrt()).ln()).sqrt().exp();
        assert!(rel_close(k, hand, 1e-12));
        assert!((k - 9.05).abs() < 0.01, "{k}");
    }

    #[test]
    fn truncation_diameter_scans() {
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let k = truncation_diameter(i as f64 / 100.0, 3, 1.0, 1.0, 2.0).unwrap();
            assert!(k <= prev);
            prev = k;
        }
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let k = truncation_diameter(0.3, 3, 1.0, 0.1 * i as f64, 2.0).unwrap();
            assert!(k <= prev && k >= 1.0);
            prev = k;
        }
        let k = truncation_diameter(0.5, 1, 1.0, 1e12, 1.0).unwrap();
        assert!(k > 1.0 && k < 1.0 + 1e-5);
    }

    #[test]
    fn g3_values() {
        let g = g3_prob_bound(100.0, 2, 3f64.exp(), 1.0).unwrap();
        assert!(rel_close(g, 400.0 * (-9f64).exp(), 1e-12));
        assert!((g - 0.04937).abs() < 1e-5);
        assert_eq!(g3_prob_bound(10.0, 3, 1.0, 2.0).unwrap(), 60.0);
        let a = g3_prob_bound(37.0, 3, 5.0, 0.7).unwrap();
        assert_eq!(g3_prob_bound(74.0, 3, 5.0, 0.7).unwrap(), 2.0 * a);
        assert!(rel_close(g3_prob_bound(37.0, 6, 5.0, 0.7).unwrap(), 2.0 * a, 1e-15));
        assert!(g3_prob_bound(1.0, 1, 0.5, 1.0).is_err());
    }

    #[test]
    fn condition3_example() {
        let lambda = 2.0;
        let m = condition3_min_m(36.0 * lambda * lambda, lambda, 1, 6.0 / E).unwrap();
        assert_eq!(m, 6);
        // log m ≥ (1 + √5)/2
        assert!(((1.0 + 5f64.sqrt()) / 2.0).exp() > 5.0);
    }

    proptest! {
        #[test]
        fn condition3_search_is_minimal(c1 in 1.0f64..400.0, d in 1usize..50, rho in 0.01f64..0.99) {
            if let Ok(m) = condition3_min_m(c1, 2.0, d, rho) {
                prop_assert!(condition3_holds(m, c1, 2.0, d, rho));
                prop_assert!(m == M_SEARCH_LO || !condition3_holds(m - 1, c1, 2.0, d, rho));
            }
        }
    }

    fn combined_inputs(d: usize) -> BoundInputs {
        BoundInputs {
            arch: Architecture::uniform(d, 2, 1).unwrap(),
            param_bound_r: 2.0,
            clip_d: 1.0,
            u: 0.0,
            v: 1.0,
            eps: 0.5,
            rho: 0.1,
            lambda: 2.0,
            c1: 2000.0,
            c2: 0.1,
            b_dk: None,
            m4d: Some(10.0),
            truncation_k: None,
        }
    }

    #[test]
    fn combined_threshold_self_consistent_and_minimal() {
        let inputs = combined_inputs(1);
        let c = combined_m_threshold(&inputs).unwrap();
        assert!(c.all_hold(), "{c:?}");
        let conds = CombinedConditions { inputs: &inputs, m4d: 10.0 };
        assert!(!conds.check(c.m - 1).unwrap().all_hold());
        assert!(rel_close(c.k, (c.m as f64).powf(1.0 / 12.0), 1e-12));
    }

    #[test]
    fn combined_threshold_nondecreasing_in_d() {
        let mut prev = 0;
        for d in [1, 2, 3, 4, 6, 8] {
            let m = combined_m_threshold(&combined_inputs(d)).unwrap().m;
            assert!(m >= prev, "d={d}: {m} < {prev}");
            prev = m;
        }
    }

    #[test]
    fn combined_threshold_infeasible_range() {
        let inputs = BoundInputs { c1: 1e-3, ..combined_inputs(1) };
        assert!(matches!(combined_m_threshold(&inputs), Err(KolmoError::Infeasible { .. })));
        let report = bound_report(&inputs).unwrap();
        assert_eq!(report.m_combined, None);
        assert!(combined_m_threshold(&BoundInputs { m4d: None, ..combined_inputs(1) }).is_err());
    }

    #[test]
    fn report_is_nonnegative_and_serializes() {
        let r = bound_report(&combined_inputs(2)).unwrap();
        assert!(r.covering_log >= 0.0 && r.m_truncated >= 0.0 && r.k_truncation >= 1.0 && r.g3_prob >= 0.0);
        assert!(r.m_combined.unwrap() >= 2.0);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("K_truncation").is_some());
        let back: BoundReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn bound_inputs_json_names() {
        let text = r#"{"arch":[1,2,1],"R":1,"D":1,"u":0,"v":1,"eps":0.5,"rho":0.1,
            "lambda":2,"c1":1,"c2":1,"B_dK":1}"#;
        let inputs: BoundInputs = serde_json::from_str(text).unwrap();
        assert_eq!(inputs, base_inputs());
    }

    fn normal_samples(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut g = RngStream::new(seed, 0).generator();
        Array2::from_shape_simple_fn((n, d), || g.sample::<f64, _>(StandardNormal))
    }

    fn terminals(p: &PdeProblem, n: usize, seed: u64) -> Array2<f64> {
        let rng = RngStream::new(seed, 0);
        let x = sample_uniform_inputs(&p.domain, n, &rng.split(0)).unwrap();
        sample_terminal(p, x.view(), &rng.split(1), &EmConfig::default()).unwrap()
    }

    #[test]
    fn tail_fit_heat_passes() {
        let p = PdeProblem::heat_polynomial(0.0, 1.0, 1.0, vec![1.0], 2);
        let t = tail_fit_or_panic(&terminals(&p, 1_000_000, 1));
        assert!(t.pass && t.c1 > 0.0, "{t:?}");
    }

    fn tail_fit_or_panic(y: &Array2<f64>) -> TailParams {
        fit_tail_default(y.view()).unwrap()
    }

    #[test]
    fn tail_fit_black_scholes_passes() {
        let p = PdeProblem {
            domain: HypercubeDomain::new(1.0, 2.0, 2),
            dynamics: DynamicsSpec::black_scholes_uncorrelated(vec![0.05; 2], vec![0.2; 2]),
            initial: InitialFunction::basket_call(vec![0.5, 0.5], 1.5),
            horizon: 1.0,
        };
        let t = tail_fit_or_panic(&terminals(&p, 1_000_000, 2));
        assert!(t.pass && t.c1 > 0.0, "{t:?}");
    }

    #[test]
    fn tail_fit_rejects_pareto() {
        let mut g = RngStream::new(3, 0).generator();
        let y = Array2::from_shape_simple_fn((1_000_000, 1), || {
            let u: f64 = g.random();
            1.0 / (1.0 - u)
        });
        let t = tail_fit_or_panic(&y);
        assert!(!t.pass, "{t:?}");
        // direct count: P(Y ≥ t) = 1/t decays slower than any exp{−c (ln t)²} eventually
        assert!(!t.violations.is_empty() || t.c1 <= 0.0);
    }

    #[test]
    fn tail_fit_pure_normal_repetitions() {
        let passes = (0..100)
            .filter(|s| tail_fit_or_panic(&normal_samples(100_000, 1, 1000 + s)).pass)
            .count();
        assert!(passes >= 99, "{passes}/100");
    }

    #[test]
    fn tail_fit_errors() {
        let small = normal_samples(10, 1, 0);
        assert!(fit_tail_constant(small.view(), &[3.0]).is_err());
        let y = normal_samples(100_000, 1, 0);
        assert!(matches!(fit_tail_constant(y.view(), &[0.5, 1.0, 100.0]), Err(KolmoError::EmptyGrid)));
        let tiny = y.mapv(|v| v * 0.1);
        assert!(matches!(default_tail_grid(tiny.view(), 16, 100), Err(KolmoError::EmptyGrid)));
        assert!(fit_tail_constant(y.view(), &[3.0, 3.1]).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let y = normal_samples(100_000, 2, 9);
        let g = default_tail_grid(y.view(), 16, 100).unwrap();
        assert_eq!(g.len(), 16);
        assert!((g[0] - E).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        let mut abs: Vec<f64> = y.iter().map(|v| v.abs()).collect();
        abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let exceed = abs.iter().filter(|v| **v >= g[15]).count();
        assert!(exceed >= 100);
    }

    #[test]
    fn moment_growth_heat_polynomial() {
        let family = |d: usize| PdeProblem::heat_polynomial(0.0, 1.0, 1.0, vec![1.0; d], 2);
        let g = moment_growth_estimate(family, &[1, 2, 4, 8, 16], 2, 100_000, 7).unwrap();
        assert!(g.slope <= 2.5, "{g:?}");
        assert!(g.slope > 1.5);
        assert!(g.points.iter().all(|p| p.ci_halfwidth > 0.0));
    }

    #[test]
    fn moment_growth_degenerate_cases() {
        let ones = |_d: usize, n: usize, _r: &RngStream| Ok(vec![1.0; n]);
        let g = moment_growth_from_sampler(ones, &[1, 2, 4, 8], 3, 100_000, 0).unwrap();
        assert!(g.slope.abs() < 1e-12);
        assert!(g.points.iter().all(|p| p.m_hat == 1.0 && p.ci_halfwidth == 0.0));
        let family = |d: usize| PdeProblem::heat_polynomial(0.0, 1.0, 1.0, vec![1.0; d], 2);
        let g0 = moment_growth_estimate(family, &[1, 3], 0, 100_000, 0).unwrap();
        assert!(g0.points.iter().all(|p| p.m_hat == 1.0));
        assert!(moment_growth_estimate(family, &[2, 2], 2, 100_000, 0).is_err());
        assert!(moment_growth_estimate(family, &[1, 2], 2, 1000, 0).is_err());
    }

    #[test]
    fn m4d_estimate_covers_closed_form() {
        // φ = y², y ~ x + √2 B_1, x ~ U[0,1]: E[y⁸] by Gaussian moments averaged over x
        let p = PdeProblem::heat_polynomial(0.0, 1.0, 1.0, vec![1.0], 2);
        let est = estimate_m4d(&p, 400_000, &RngStream::new(5, 0)).unwrap();
        let s2: f64 = 2.0;
        let exact: f64 = (0..=8u32)
            .step_by(2)
            .map(|j| {
                let binom = (0..j).fold(1.0, |a, i| a * (8 - i) as f64 / (i + 1) as f64);
                let mom: f64 = (1..j).step_by(2).map(|i| i as f64).product();
                // ∫_0^1 x^{8-j} dx = 1/(9-j)
                binom * s2.powi(j as i32 / 2) * mom / (9 - j) as f64
            })
            .sum();
        assert!(est >= exact * 0.97, "{est} vs {exact}");
        assert!(est <= exact * 1.2, "{est} vs {exact}");
    }
}

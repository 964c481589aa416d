//! Deterministic reductions and small estimators shared by the samplers,
//! oracles and bound fitters.
//!
//! Sums are taken over fixed chunks and combined pairwise, so the result is
//! bit-identical regardless of the rayon thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const SUM_CHUNK: usize = 512;

/// Two-sided 99% standard normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_900_4;

/// Pairwise combination of partial sums in index order.
pub fn pairwise(mut parts: Vec<f64>) -> f64 {
    if parts.is_empty() {
        return 0.0;
    }
    while parts.len() > 1 {
        parts = parts
            .chunks(2)
            .map(|c| if c.len() == 2 { c[0] + c[1] } else { c[0] })
            .collect();
    }
    parts[0]
}

/// Fixed-tree sum of `f(i)` for `i in 0..n`.
pub fn tree_sum_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(SUM_CHUNK);
    let parts: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * SUM_CHUNK;
            let hi = (lo + SUM_CHUNK).min(n);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        })
        .collect();
    pairwise(parts)
}

pub fn tree_sum(values: &[f64]) -> f64 {
    tree_sum_by(values.len(), |i| values[i])
}

/// Sample mean with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MeanEstimate {
    /// Computed around the first value so that constant data gives that value
    /// back exactly with zero variance.
    pub fn from_fn<F>(n: usize, f: F) -> MeanEstimate
    where
        F: Fn(usize) -> f64 + Sync,
    {
        assert!(n > 0, "mean of an empty sample");
        let shift = f(0);
        let s1 = tree_sum_by(n, |i| f(i) - shift);
        let s2 = tree_sum_by(n, |i| {
            let t = f(i) - shift;
            t * t
        });
        let nf = n as f64;
        let mean = shift + s1 / nf;
        let variance = if n > 1 {
            ((s2 - s1 * s1 / nf) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        MeanEstimate {
            mean,
            variance,
            std_error: (variance / nf).sqrt(),
            n,
        }
    }

    pub fn from_slice(values: &[f64]) -> MeanEstimate {
        MeanEstimate::from_fn(values.len(), |i| values[i])
    }

    pub fn ci99(&self) -> f64 {
        Z_99 * self.std_error
    }
}

/// Ordinary least squares `y ~ slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - slope * x - intercept;
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_sum_matches_exact_integers() {
        let v: Vec<f64> = (1..=10_000).map(|i| i as f64).collect();
        assert_eq!(tree_sum(&v), 50_005_000.0);
        assert_eq!(tree_sum(&[]), 0.0);
    }

    #[test]
    fn constant_sample_is_exact() {
        let est = MeanEstimate::from_fn(1000, |_| 0.1);
        assert_eq!(est.mean, 0.1);
        assert_eq!(est.variance, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn mean_and_variance_of_small_sample() {
        let est = MeanEstimate::from_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert!((est.mean - 2.5).abs() < 1e-15);
        assert!((est.variance - 5.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn line_is_recovered() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let fit = linear_fit(&xs, &ys);
        assert!((fit.slope - 2.0).abs() < 1e-14);
        assert!((fit.intercept + 1.0).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-14);
    }
}

//! Training-data generation: uniform inputs on the hypercube and SDE terminal
//! values, sampled exactly for heat and Black-Scholes dynamics and by
//! Euler–Maruyama for generic affine coefficients.

mod dataset;
mod rng;

pub use dataset::{make_dataset, make_dataset_with, Dataset, DatasetMeta};
pub use rng::{splitmix64, RngStream};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KolmoError, Result};
use crate::pde_model::{DynamicsSpec, HypercubeDomain, PdeProblem};

/// Rows per independently keyed generator block.
pub const BLOCK_ROWS: usize = 1024;

pub const DEFAULT_EM_STEPS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmConfig {
    pub steps: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_EM_STEPS,
        }
    }
}

/// Fills `rows x cols` block by block; `f` receives the block generator, the
/// index of its first row and the row-major block buffer.
fn fill_blocks<F>(rows: usize, cols: usize, rng: &RngStream, f: F) -> Result<Array2<f64>>
where
    F: Fn(&mut ChaCha8Rng, usize, &mut [f64]) -> Result<()> + Sync,
{
    let mut out = Array2::<f64>::zeros((rows, cols));
    if rows == 0 || cols == 0 {
        return Ok(out);
    }
    let buf = out.as_slice_mut().expect("standard layout");
    let results: Vec<Result<()>> = buf
        .par_chunks_mut(BLOCK_ROWS * cols)
        .enumerate()
        .map(|(b, chunk)| {
            let mut g = rng.block(b as u64);
            f(&mut g, b * BLOCK_ROWS, chunk)
        })
        .collect();
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(out)
}

#[inline]
fn normal(g: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(g)
}

pub fn sample_uniform_inputs(
    domain: &HypercubeDomain,
    m: usize,
    rng: &RngStream,
) -> Result<Array2<f64>> {
    if m == 0 {
        return Err(KolmoError::invalid("sample count m must be at least 1"));
    }
    let (u, v) = (domain.u, domain.v);
    let width = v - u;
    fill_blocks(m, domain.d, rng, |g, _, chunk| {
        for x in chunk.iter_mut() {
            let r: f64 = g.random();
            // clamp guards against u + width * r rounding up to v
            *x = (u + width * r).min(v);
        }
        Ok(())
    })
}

/// `Y = X + sqrt(2T) Z`.
pub fn sample_heat_terminal(
    x: ArrayView2<'_, f64>,
    horizon: f64,
    rng: &RngStream,
) -> Result<Array2<f64>> {
    check_horizon(horizon)?;
    let d = x.ncols();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let scale = (2.0 * horizon).sqrt();
    fill_blocks(x.nrows(), d, rng, |g, row0, chunk| {
        let off = row0 * d;
        for (j, y) in chunk.iter_mut().enumerate() {
            *y = xs[off + j] + scale * normal(g);
        }
        Ok(())
    })
}

/// Exact lognormal terminal law of the Black-Scholes SDE: one Brownian
/// endpoint `B_T ~ N(0, T I)` per row, shared by all coordinates through the
/// correlation rows.
pub fn sample_bs_terminal(
    x: ArrayView2<'_, f64>,
    dynamics: &DynamicsSpec,
    horizon: f64,
    rng: &RngStream,
) -> Result<Array2<f64>> {
    check_horizon(horizon)?;
    let DynamicsSpec::BlackScholes {
        alpha,
        beta,
        sigma_rows,
    } = dynamics
    else {
        return Err(KolmoError::invalid("sample_bs_terminal needs Black-Scholes dynamics"));
    };
    let d = x.ncols();
    if alpha.len() != d || beta.len() != d || sigma_rows.len() != d {
        return Err(KolmoError::DimensionMismatch {
            expected: d,
            got: alpha.len(),
        });
    }
    if let Some((row, _)) = x
        .rows()
        .into_iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !(*v > 0.0)))
    {
        return Err(KolmoError::invalid(format!(
            "Black-Scholes inputs must be positive (row {row})"
        )));
    }
    let drift: Vec<f64> = (0..d)
        .map(|i| {
            let row_sq: f64 = sigma_rows[i].iter().map(|s| s * s).sum();
            (alpha[i] - beta[i] * beta[i] * row_sq / 2.0) * horizon
        })
        .collect();
    let sqrt_t = horizon.sqrt();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    fill_blocks(x.nrows(), d, rng, |g, row0, chunk| {
        let mut b = vec![0.0; d];
        for (r, yrow) in chunk.chunks_mut(d).enumerate() {
            b.iter_mut().for_each(|bj| *bj = sqrt_t * normal(g));
            let xrow = &xs[(row0 + r) * d..(row0 + r + 1) * d];
            for i in 0..d {
                let dot: f64 = sigma_rows[i].iter().zip(&b).map(|(s, bj)| s * bj).sum();
                yrow[i] = xrow[i] * (drift[i] + beta[i] * dot).exp();
            }
        }
        Ok(())
    })
}

/// Euler–Maruyama with step `T / steps`; any variant is first rewritten as affine maps.
pub fn euler_maruyama_terminal(
    x: ArrayView2<'_, f64>,
    dynamics: &DynamicsSpec,
    horizon: f64,
    cfg: &EmConfig,
    rng: &RngStream,
) -> Result<Array2<f64>> {
    check_horizon(horizon)?;
    if cfg.steps == 0 {
        return Err(KolmoError::invalid("Euler–Maruyama needs at least one step"));
    }
    let d = x.ncols();
    let DynamicsSpec::GenericAffine {
        drift_matrix,
        drift_offset,
        diffusion_matrices,
    } = dynamics.to_generic_affine(d)
    else {
        unreachable!("to_generic_affine always yields GenericAffine");
    };
    if drift_matrix.len() != d || drift_offset.len() != d || diffusion_matrices.len() != d + 1 {
        return Err(KolmoError::invalid("affine coefficients do not match the input dimension"));
    }
    let h = horizon / cfg.steps as f64;
    let sqrt_h = h.sqrt();
    let steps = cfg.steps;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    fill_blocks(x.nrows(), d, rng, |g, row0, chunk| {
        let mut dw = vec![0.0; d];
        let mut next = vec![0.0; d];
        for (r, s) in chunk.chunks_mut(d).enumerate() {
            s.copy_from_slice(&xs[(row0 + r) * d..(row0 + r + 1) * d]);
            for step in 0..steps {
                dw.iter_mut().for_each(|w| *w = sqrt_h * normal(g));
                for i in 0..d {
                    let mu: f64 = drift_offset[i]
                        + drift_matrix[i].iter().zip(s.iter()).map(|(a, sj)| a * sj).sum::<f64>();
                    // (sigma(s) dW)_i = (S_0 dW)_i + sum_k s_k (S_k dW)_i
                    let mut noise: f64 = diffusion_matrices[0][i]
                        .iter()
                        .zip(&dw)
                        .map(|(a, w)| a * w)
                        .sum();
                    for k in 0..d {
                        let row = &diffusion_matrices[k + 1][i];
                        let sk_dw: f64 = row.iter().zip(&dw).map(|(a, w)| a * w).sum();
                        noise += s[k] * sk_dw;
                    }
                    next[i] = s[i] + mu * h + noise;
                }
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(KolmoError::NonFinite {
                        what: "Euler–Maruyama state",
                        row: row0 + r,
                        step,
                    });
                }
                s.copy_from_slice(&next);
            }
        }
        Ok(())
    })
}

/// Terminal values for the problem's dynamics: exact samplers for heat and
/// Black-Scholes, Euler–Maruyama otherwise.
pub fn sample_terminal(
    p: &PdeProblem,
    x: ArrayView2<'_, f64>,
    rng: &RngStream,
    em: &EmConfig,
) -> Result<Array2<f64>> {
    match &p.dynamics {
        DynamicsSpec::Heat => sample_heat_terminal(x, p.horizon, rng),
        bs @ DynamicsSpec::BlackScholes { .. } => sample_bs_terminal(x, bs, p.horizon, rng),
        affine @ DynamicsSpec::GenericAffine { .. } => {
            euler_maruyama_terminal(x, affine, p.horizon, em, rng)
        }
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon.is_finite() && horizon > 0.0 {
        Ok(())
    } else {
        Err(KolmoError::invalid("horizon T must be positive"))
    }
}

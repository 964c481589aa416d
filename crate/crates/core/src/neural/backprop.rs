//! Squared-loss risk over a batch and its exact (sub)gradient.
//!
//! Conventions: `ρ'(0) = 0`, and the clip has derivative 1 on `[-D, D]`
//! (boundary included) and 0 outside. Per-chunk partial sums are combined
//! by a fixed pairwise tree, so results do not depend on thread scheduling.

use ndarray::ArrayView2;
use rayon::prelude::*;

use super::{clip, ClippedNetwork, NetworkParams};
use crate::error::{KolmoError, Result};
use crate::stats::tree_sum_by;

const GRAD_CHUNK: usize = 64;

fn check_batch(net: &ClippedNetwork, inputs: &ArrayView2<'_, f64>, labels: &[f64]) -> Result<()> {
    if labels.is_empty() {
        return Err(KolmoError::invalid("batch must contain at least one sample"));
    }
    if inputs.nrows() != labels.len() {
        return Err(KolmoError::DimensionMismatch {
            expected: labels.len(),
            got: inputs.nrows(),
        });
    }
    if inputs.ncols() != net.input_dim() {
        return Err(KolmoError::DimensionMismatch {
            expected: net.input_dim(),
            got: inputs.ncols(),
        });
    }
    Ok(())
}

/// `(1/b) Σ (Clip_D Φ(x_i) − z_i)²`
pub fn batch_loss(net: &ClippedNetwork, inputs: ArrayView2<'_, f64>, labels: &[f64]) -> Result<f64> {
    check_batch(net, &inputs, labels)?;
    let x = inputs.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let d = net.input_dim();
    let total = tree_sum_by(labels.len(), |i| {
        let r = net.forward(&xs[i * d..(i + 1) * d]) - labels[i];
        r * r
    });
    Ok(total / labels.len() as f64)
}

/// Scratch buffers for one forward/backward pass.
struct Tape {
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    /// Layer inputs: `acts[0] = x`, `acts[l] = ρ(pre[l-1])`.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Tape {
    fn new(net: &ClippedNetwork) -> Self {
        let sizes = net.arch.sizes();
        Tape {
            pre: sizes[1..].iter().map(|n| vec![0.0; *n]).collect(),
            acts: sizes[..sizes.len() - 1].iter().map(|n| vec![0.0; *n]).collect(),
            delta: Vec::with_capacity(net.arch.width()),
            delta_prev: Vec::with_capacity(net.arch.width()),
        }
    }

    fn forward(&mut self, net: &ClippedNetwork, x: &[f64]) -> f64 {
        self.acts[0].copy_from_slice(x);
        let n_layers = net.params.layers.len();
        for (l, layer) in net.params.layers.iter().enumerate() {
            let a = layer.weights.as_slice().expect("standard layout");
            let input = &self.acts[l];
            let n_in = input.len();
            for (i, b) in layer.bias.iter().enumerate() {
                let row = &a[i * n_in..(i + 1) * n_in];
                self.pre[l][i] = b + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
            }
            if l + 1 < n_layers {
                let (pre, acts) = (&self.pre[l], &mut self.acts[l + 1]);
                acts.iter_mut().zip(pre).for_each(|(a, z)| *a = z.max(0.0));
            }
        }
        self.pre[n_layers - 1][0]
    }

    /// Adds `g · ∂Φ/∂θ` into `grad` (flat canonical layout).
    fn backward(&mut self, net: &ClippedNetwork, g: f64, grad: &mut [f64], offsets: &[usize]) {
        self.delta.clear();
        self.delta.push(g);
        for l in (0..net.params.layers.len()).rev() {
            let layer = &net.params.layers[l];
            let input = &self.acts[l];
            let n_in = input.len();
            let n_out = self.delta.len();
            let off = offsets[l];
            for i in 0..n_out {
                let di = self.delta[i];
                if di == 0.0 {
                    continue;
                }
                let gw = &mut grad[off + i * n_in..off + (i + 1) * n_in];
                gw.iter_mut().zip(input).for_each(|(gv, v)| *gv += di * v);
                grad[off + n_out * n_in + i] += di;
            }
            if l == 0 {
                break;
            }
            let a = layer.weights.as_slice().expect("standard layout");
            let pre_prev = &self.pre[l - 1];
            self.delta_prev.clear();
            for j in 0..n_in {
                let active = pre_prev[j] > 0.0;
                let mut s = 0.0;
                if active {
                    for i in 0..n_out {
                        s += a[i * n_in + j] * self.delta[i];
                    }
                }
                self.delta_prev.push(s);
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

fn layer_offsets(net: &ClippedNetwork) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(net.params.layers.len());
    let mut acc = 0;
    for l in &net.params.layers {
        offsets.push(acc);
        acc += l.weights.len() + l.bias.len();
    }
    offsets
}

/// Gradient of [`batch_loss`] with respect to all parameters.
pub fn backward_gradients(
    net: &ClippedNetwork,
    inputs: ArrayView2<'_, f64>,
    labels: &[f64],
) -> Result<NetworkParams> {
    check_batch(net, &inputs, labels)?;
    let x = inputs.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let d = net.input_dim();
    let b = labels.len();
    let p = net.arch.param_count();
    let offsets = layer_offsets(net);
    let clip_d = net.clip_d;

    let mut parts: Vec<Vec<f64>> = (0..b.div_ceil(GRAD_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut tape = Tape::new(net);
            let mut grad = vec![0.0; p];
            for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(b) {
                let raw = tape.forward(net, &xs[i * d..(i + 1) * d]);
                if raw.abs() > clip_d {
                    continue;
                }
                let residual = clip(raw, clip_d) - labels[i];
                if residual != 0.0 {
                    tape.backward(net, 2.0 * residual, &mut grad, &offsets);
                }
            }
            grad
        })
        .collect();

    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(bv) = it.next() {
                a.iter_mut().zip(&bv).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    let scale = 1.0 / b as f64;
    let mut flat = parts.pop().unwrap_or_else(|| vec![0.0; p]);
    flat.iter_mut().for_each(|v| *v *= scale);
    if let Some(pos) = flat.iter().position(|v| !v.is_finite()) {
        return Err(KolmoError::NonFinite {
            what: "gradient",
            row: pos,
            step: 0,
        });
    }
    NetworkParams::from_flat(&net.arch, &flat)
}

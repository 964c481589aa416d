//! Clipped ReLU feedforward networks.
//!
//! A network with architecture `a = (N_0, ..., N_L)` computes
//! `W_L ∘ ρ ∘ W_{L-1} ∘ ... ∘ ρ ∘ W_1` with affine `W_l(x) = A_l x + B_l`
//! and `ρ = max(·, 0)`; the clipped network then clamps the output to
//! `[-D, D]`. Weights are stored output × input, and the canonical flat
//! parameter vector is layer-major with each layer's weights row-major
//! followed by its bias.

mod backprop;
mod init;

pub use backprop::{backward_gradients, batch_loss};
pub use init::{init_params, InitScheme};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KolmoError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Architecture(Vec<usize>);

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(KolmoError::invalid("architecture needs at least input and output sizes"));
        }
        if layer_sizes.contains(&0) {
            return Err(KolmoError::invalid("layer sizes must be positive"));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(KolmoError::invalid("networks must have a single output"));
        }
        Ok(Self(layer_sizes))
    }

    /// `(d, width, ..., width, 1)` with `hidden` hidden layers.
    pub fn uniform(d: usize, width: usize, hidden: usize) -> Result<Self> {
        let mut sizes = vec![d];
        sizes.extend(std::iter::repeat_n(width, hidden));
        sizes.push(1);
        Self::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn input_dim(&self) -> usize {
        self.0[0]
    }

    /// `L(a)`
    pub fn depth(&self) -> usize {
        self.0.len() - 1
    }

    /// `W(a) = ‖a‖_∞`
    pub fn width(&self) -> usize {
        *self.0.iter().max().unwrap()
    }

    /// `P(a) = Σ_l N_l (N_{l-1} + 1)`
    pub fn param_count(&self) -> usize {
        self.0.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

impl TryFrom<Vec<usize>> for Architecture {
    type Error = KolmoError;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Architecture::new(v)
    }
}

impl From<Architecture> for Vec<usize> {
    fn from(a: Architecture) -> Self {
        a.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchMetrics {
    pub depth: usize,
    pub width: usize,
    pub param_count: usize,
}

pub fn arch_metrics(arch: &Architecture) -> ArchMetrics {
    ArchMetrics {
        depth: arch.depth(),
        width: arch.width(),
        param_count: arch.param_count(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `N_l × N_{l-1}`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .sizes()
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.layers.len() == arch.depth()
            && self
                .layers
                .iter()
                .zip(arch.sizes().windows(2))
                .all(|(l, w)| l.weights.dim() == (w[1], w[0]) && l.bias.len() == w[1])
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn from_flat(arch: &Architecture, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.param_count() {
            return Err(KolmoError::DimensionMismatch {
                expected: arch.param_count(),
                got: flat.len(),
            });
        }
        let mut p = Self::zeros(arch);
        p.iter_mut().zip(flat).for_each(|(a, b)| *a = *b);
        Ok(p)
    }

    /// `‖θ‖_∞`
    pub fn sup_norm(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Hex SHA-256 of the little-endian flat parameter vector.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.iter() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Anything that maps a point of the hypercube to a real number.
pub trait Predictor: Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

/// Adapts a closure to [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn predict(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

/// A member of the clipped class `N_{a,R,D}` (when `‖θ‖_∞ ≤ R`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedNetwork {
    pub arch: Architecture,
    pub params: NetworkParams,
    pub clip_d: f64,
    pub param_bound_r: f64,
}

/// `sgn(x) · min(|x|, D)`
#[inline]
pub fn clip(x: f64, d: f64) -> f64 {
    x.clamp(-d, d)
}

impl ClippedNetwork {
    pub fn new(
        arch: Architecture,
        params: NetworkParams,
        clip_d: f64,
        param_bound_r: f64,
    ) -> Result<Self> {
        if !params.matches(&arch) {
            return Err(KolmoError::invalid("parameter shapes do not match the architecture"));
        }
        if !params.all_finite() {
            return Err(KolmoError::invalid("parameters must be finite"));
        }
        if !(clip_d > 0.0 && clip_d.is_finite()) {
            return Err(KolmoError::invalid("clip bound D must be positive"));
        }
        if !(param_bound_r > 0.0 && param_bound_r.is_finite()) {
            return Err(KolmoError::invalid("parameter bound R must be positive"));
        }
        Ok(Self {
            arch,
            params,
            clip_d,
            param_bound_r,
        })
    }

    pub fn zeros(arch: Architecture, clip_d: f64, param_bound_r: f64) -> Result<Self> {
        let params = NetworkParams::zeros(&arch);
        Self::new(arch, params, clip_d, param_bound_r)
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    /// `‖θ‖_∞ ≤ R`, i.e. the network belongs to `N_{a,R,D}`.
    pub fn in_class(&self) -> bool {
        self.params.sup_norm() <= self.param_bound_r
    }

    /// Unclipped value `Φ_θ(x)`.
    pub fn forward_raw(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        let w = self.arch.width();
        let mut cur = Vec::with_capacity(w);
        let mut next = Vec::with_capacity(w);
        cur.extend_from_slice(x);
        let last = self.params.layers.len() - 1;
        for (l, layer) in self.params.layers.iter().enumerate() {
            next.clear();
            let a = layer.weights.as_slice().expect("standard layout");
            let n_in = cur.len();
            for (i, b) in layer.bias.iter().enumerate() {
                let row = &a[i * n_in..(i + 1) * n_in];
                let z = b + row.iter().zip(&cur).map(|(w, c)| w * c).sum::<f64>();
                next.push(if l == last { z } else { z.max(0.0) });
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// `Clip_D(Φ_θ(x))`, always in `[-D, D]`.
    pub fn forward(&self, x: &[f64]) -> f64 {
        clip(self.forward_raw(x), self.clip_d)
    }

    /// Clamps every parameter to `[-R, R]`. Returns whether anything changed.
    pub fn project_params(&mut self) -> bool {
        let r = self.param_bound_r;
        let mut changed = false;
        for v in self.params.iter_mut() {
            let c = v.clamp(-r, r);
            if c != *v {
                *v = c;
                changed = true;
            }
        }
        changed
    }

    pub fn projected(mut self) -> Self {
        self.project_params();
        self
    }

    pub fn to_json(&self) -> NetworkJson {
        NetworkJson {
            arch: self.arch.sizes().to_vec(),
            clip_d: self.clip_d,
            param_bound_r: self.param_bound_r,
            layers: self
                .params
                .layers
                .iter()
                .map(|l| LayerJson {
                    a: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                    b: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_json(j: &NetworkJson) -> Result<Self> {
        let arch = Architecture::new(j.arch.clone())?;
        let mut flat = Vec::with_capacity(arch.param_count());
        for l in &j.layers {
            l.a.iter().for_each(|r| flat.extend_from_slice(r));
            flat.extend_from_slice(&l.b);
        }
        let params = NetworkParams::from_flat(&arch, &flat)?;
        // row lengths are not checked by the flat count alone
        let ok = j
            .layers
            .iter()
            .zip(arch.sizes().windows(2))
            .all(|(l, w)| l.a.len() == w[1] && l.a.iter().all(|r| r.len() == w[0]) && l.b.len() == w[1]);
        if !ok || j.layers.len() != arch.depth() {
            return Err(KolmoError::invalid("layer shapes do not match the architecture"));
        }
        Self::new(arch, params, j.clip_d, j.param_bound_r)
    }
}

impl Predictor for ClippedNetwork {
    fn predict(&self, x: &[f64]) -> f64 {
        self.forward(x)
    }
}

/// On-disk network format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkJson {
    pub arch: Vec<usize>,
    #[serde(rename = "clip_D")]
    pub clip_d: f64,
    #[serde(rename = "param_bound_R")]
    pub param_bound_r: f64,
    pub layers: Vec<LayerJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
}

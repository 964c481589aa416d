//! Empirical risk, its truncated variant, and the minibatch training loop that
//! stands in for the empirical risk minimizer over `N_{a,R,D}`.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KolmoError, Result};
use crate::neural::{
    backward_gradients, batch_loss, init_params, Architecture, ClippedNetwork, InitScheme,
    Predictor,
};
use crate::pde_model::PdeProblem;
use crate::sde_sim::{Dataset, RngStream};
use crate::stats::tree_sum_by;

/// `(1/m) Σ (f(x_i) − φ(y_i))²` using the clipped forward pass.
pub fn empirical_risk(net: &ClippedNetwork, data: &Dataset) -> Result<f64> {
    batch_loss(net, data.inputs.view(), &data.labels)
}

/// Empirical risk of an arbitrary predictor; identical summation order to [`empirical_risk`].
pub fn empirical_risk_of<P: Predictor + ?Sized>(f: &P, data: &Dataset) -> Result<f64> {
    risk_against(f, data.inputs.view(), &data.labels)
}

fn risk_against<P: Predictor + ?Sized>(
    f: &P,
    inputs: ArrayView2<'_, f64>,
    labels: &[f64],
) -> Result<f64> {
    if labels.is_empty() {
        return Err(KolmoError::invalid("risk of an empty dataset"));
    }
    let x = inputs.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let d = inputs.ncols();
    let total = tree_sum_by(labels.len(), |i| {
        let r = f.predict(&xs[i * d..(i + 1) * d]) - labels[i];
        r * r
    });
    Ok(total / labels.len() as f64)
}

/// `1{‖y‖_∞ ≤ K} · label`
pub fn truncate_label(y_raw: &[f64], label: f64, k: f64) -> f64 {
    let sup = y_raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sup <= k {
        label
    } else {
        0.0
    }
}

pub fn truncated_labels(data: &Dataset, k: f64) -> Result<Vec<f64>> {
    if !(k > 0.0) {
        return Err(KolmoError::invalid("truncation diameter K must be positive"));
    }
    Ok(data
        .raw_terminals
        .rows()
        .into_iter()
        .zip(&data.labels)
        .map(|(y, l)| truncate_label(y.as_slice().expect("contiguous row"), *l, k))
        .collect())
}

/// Empirical risk against the truncated labels `φ^{(K)}(y_i)`.
pub fn truncated_empirical_risk(net: &ClippedNetwork, data: &Dataset, k: f64) -> Result<f64> {
    let labels = truncated_labels(data, k)?;
    batch_loss(net, data.inputs.view(), &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMethod {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: OptimizerMethod,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: OptimizerMethod::Adam,
            learning_rate: 1e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_projection")]
    pub projection: bool,
    #[serde(default, rename = "truncation_K", skip_serializing_if = "Option::is_none")]
    pub truncation_k: Option<f64>,
}

fn default_batch() -> usize {
    256
}
fn default_projection() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: default_batch(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            projection: true,
            truncation_k: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > m {
            return Err(KolmoError::invalid(format!(
                "batch_size must be in [1, m = {m}], got {}",
                self.batch_size
            )));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(KolmoError::invalid("learning_rate must be positive"));
        }
        if o.method == OptimizerMethod::Adam
            && !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0)
        {
            return Err(KolmoError::invalid("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        if let Some(k) = self.truncation_k {
            if !(k > 0.0) {
                return Err(KolmoError::invalid("truncation_K must be positive"));
            }
        }
        Ok(())
    }
}

/// The hypothesis class `N_{a,R,D}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisClass {
    pub arch: Architecture,
    #[serde(rename = "R")]
    pub param_bound_r: f64,
    #[serde(rename = "D")]
    pub clip_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_empirical_risk: f64,
    /// Full-dataset empirical risk after each epoch.
    pub risk_curve: Vec<f64>,
    pub wall_time_s: f64,
    /// Fraction of optimizer steps after which projection changed a parameter.
    pub projection_active_fraction: f64,
    pub trained_network_hash: String,
    pub steps: usize,
}

impl TrainReport {
    /// Hash over every field except the wall time.
    pub fn numeric_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.final_empirical_risk.to_le_bytes());
        for r in &self.risk_curve {
            h.update(r.to_le_bytes());
        }
        h.update(self.projection_active_fraction.to_le_bytes());
        h.update(self.trained_network_hash.as_bytes());
        h.update((self.steps as u64).to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn risk_curve_csv(&self) -> String {
        let mut s = String::from("epoch,empirical_risk\n");
        for (e, r) in self.risk_curve.iter().enumerate() {
            s.push_str(&format!("{},{}\n", e + 1, r));
        }
        s
    }
}

enum OptimizerState {
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
    Sgd,
}

impl OptimizerState {
    fn new(cfg: &OptimizerConfig, p: usize) -> Self {
        match cfg.method {
            OptimizerMethod::Adam => OptimizerState::Adam {
                m: vec![0.0; p],
                v: vec![0.0; p],
                t: 0,
            },
            OptimizerMethod::Sgd => OptimizerState::Sgd,
        }
    }

    fn step(&mut self, cfg: &OptimizerConfig, theta: &mut [f64], grad: &[f64]) {
        let lr = cfg.learning_rate;
        match self {
            OptimizerState::Sgd => {
                theta.iter_mut().zip(grad).for_each(|(w, g)| *w -= lr * g);
            }
            OptimizerState::Adam { m, v, t } => {
                *t += 1;
                let bc1 = 1.0 - cfg.beta1.powi(*t);
                let bc2 = 1.0 - cfg.beta2.powi(*t);
                for i in 0..theta.len() {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    theta[i] -= lr * mh / (vh.sqrt() + cfg.eps);
                }
            }
        }
    }
}

/// Minibatch optimization of the (optionally truncated) empirical risk over
/// `N_{a,R,D}`, projecting onto `‖θ‖_∞ ≤ R` after every step when enabled.
/// Deterministic given `cfg.seed`.
pub fn train(
    problem: &PdeProblem,
    data: &Dataset,
    hclass: &HypothesisClass,
    cfg: &TrainConfig,
) -> Result<(ClippedNetwork, TrainReport)> {
    let d = problem.dim();
    if data.dim() != d {
        return Err(KolmoError::DimensionMismatch {
            expected: d,
            got: data.dim(),
        });
    }
    if hclass.arch.input_dim() != d {
        return Err(KolmoError::DimensionMismatch {
            expected: d,
            got: hclass.arch.input_dim(),
        });
    }
    if data.is_empty() {
        return Err(KolmoError::invalid("cannot train on an empty dataset"));
    }
    cfg.validate(data.len())?;

    let start = Instant::now();
    let root = RngStream::new(cfg.seed, 0x0074_7261_696e);
    let params = init_params(&hclass.arch, InitScheme::HeUniform, &root.split(0));
    let mut net = ClippedNetwork::new(
        hclass.arch.clone(),
        params,
        hclass.clip_d,
        hclass.param_bound_r,
    )?;
    if cfg.projection {
        net.project_params();
    }

    let targets: Vec<f64> = match cfg.truncation_k {
        Some(k) => truncated_labels(data, k)?,
        None => data.labels.clone(),
    };

    let m = data.len();
    let bsz = cfg.batch_size;
    let mut order: Vec<usize> = (0..m).collect();
    let mut theta = net.params.to_flat();
    let mut opt = OptimizerState::new(&cfg.optimizer, theta.len());
    let mut batch_x = Array2::<f64>::zeros((bsz, d));
    let mut batch_z = vec![0.0; bsz];
    let mut risk_curve = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;
    let mut projected_steps = 0usize;

    for epoch in 0..cfg.epochs {
        let mut g = root.split(1 + epoch as u64).generator();
        order.shuffle(&mut g);
        for (b, chunk) in order.chunks(bsz).enumerate() {
            let n = chunk.len();
            if n != batch_x.nrows() {
                batch_x = Array2::zeros((n, d));
                batch_z.resize(n, 0.0);
            }
            for (r, &i) in chunk.iter().enumerate() {
                batch_x.row_mut(r).assign(&data.inputs.row(i));
                batch_z[r] = targets[i];
            }
            let grad = backward_gradients(&net, batch_x.view(), &batch_z[..n])?;
            opt.step(&cfg.optimizer, &mut theta, &grad.to_flat());
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(KolmoError::Divergence {
                    epoch,
                    step: b,
                    risk: f64::NAN,
                });
            }
            net.params.iter_mut().zip(&theta).for_each(|(p, t)| *p = *t);
            if cfg.projection && net.project_params() {
                projected_steps += 1;
                theta.iter_mut().zip(net.params.iter()).for_each(|(t, p)| *t = *p);
            }
            steps += 1;
            if n != bsz {
                batch_x = Array2::zeros((bsz, d));
                batch_z.resize(bsz, 0.0);
            }
        }
        let risk = empirical_risk(&net, data)?;
        if !risk.is_finite() {
            return Err(KolmoError::Divergence {
                epoch,
                step: steps,
                risk,
            });
        }
        risk_curve.push(risk);
    }

    let final_empirical_risk = empirical_risk(&net, data)?;
    let report = TrainReport {
        final_empirical_risk,
        risk_curve,
        wall_time_s: start.elapsed().as_secs_f64(),
        projection_active_fraction: if steps == 0 {
            0.0
        } else {
            projected_steps as f64 / steps as f64
        },
        trained_network_hash: net.params.content_hash(),
        steps,
    };
    Ok((net, report))
}

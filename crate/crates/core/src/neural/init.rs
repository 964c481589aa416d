use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, NetworkParams};
use crate::sde_sim::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights `U(-a, a)` with `a = min(sqrt(6 / fan_in), 1)`, biases zero.
    /// The standard deviation is `sqrt(2 / fan_in)` whenever `fan_in >= 6`,
    /// and every entry lies in `[-1, 1]`.
    #[default]
    HeUniform,
}

pub fn init_params(arch: &Architecture, scheme: InitScheme, rng: &RngStream) -> NetworkParams {
    let mut g = rng.generator();
    let mut params = NetworkParams::zeros(arch);
    match scheme {
        InitScheme::HeUniform => {
            for layer in &mut params.layers {
                let fan_in = layer.weights.ncols() as f64;
                let a = (6.0 / fan_in).sqrt().min(1.0);
                layer.weights.iter_mut().for_each(|w| *w = g.random_range(-a..a));
            }
        }
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_with_zero_biases() {
        let arch = Architecture::new(vec![4, 16, 8, 1]).unwrap();
        let a = init_params(&arch, InitScheme::HeUniform, &RngStream::new(3, 1));
        let b = init_params(&arch, InitScheme::HeUniform, &RngStream::new(3, 1));
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|v| *v == 0.0)));
        let c = init_params(&arch, InitScheme::HeUniform, &RngStream::new(4, 1));
        assert_ne!(a, c);
    }

    #[test]
    fn he_std_for_wide_fan_in() {
        let n = 1024;
        let arch = Architecture::new(vec![n, 64, 1]).unwrap();
        let target = (2.0 / n as f64).sqrt();
        for draw in 0..10 {
            let p = init_params(&arch, InitScheme::HeUniform, &RngStream::new(draw, 0));
            let w = &p.layers[0].weights;
            let mean = w.mean().unwrap();
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
            let std = var.sqrt();
            assert!((std - target).abs() < 0.2 * target, "draw {draw}: {std} vs {target}");
        }
    }
}

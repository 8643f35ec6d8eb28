//! Float parameters of a layer stack, their initialization and the Adam
//! optimizer used by every trainer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Layer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    pub fn zeros(layers: &[Layer]) -> Self {
        Params {
            layers: layers
                .iter()
                .map(|l| LayerParams {
                    weight: vec![0.0; l.weight_len()],
                    bias: vec![0.0; l.bias_len()],
                })
                .collect(),
        }
    }

    /// Uniform `±gain·√(3/fan_in)` weights, zero biases.
    pub fn init(layers: &[Layer], gains: &[f32], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(layers);
        for (i, (layer, lp)) in layers.iter().zip(&mut p.layers).enumerate() {
            let fan_in = (layer.weight_len() / layer.bias_len()).max(1) as f32;
            let gain = gains.get(i).copied().unwrap_or(1.0);
            let bound = gain * (3.0 / fan_in).sqrt();
            for w in &mut lp.weight {
                *w = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn fill(&mut self, value: f32) {
        for l in &mut self.layers {
            l.weight.fill(value);
            l.bias.fill(value);
        }
    }

    pub fn add_scaled(&mut self, other: &Params, k: f32) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += k * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += k * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f32 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f32]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    fn slices(&self) -> impl Iterator<Item = &[f32]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: i32,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(shape: &Params, lr: f32) -> Self {
        let mut m = shape.clone();
        m.fill(0.0);
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// Applies one update with gradient `grad` (already averaged).
    pub fn update(&mut self, params: &mut Params, grad: &Params) {
        self.step += 1;
        let b1c = 1.0 - self.beta1.powi(self.step);
        let b2c = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .slices_mut()
            .zip(grad.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / b1c) / ((v[i] / b2c).sqrt() + eps);
            }
        }
    }
}

//! Real-valued conv-conv-FC baseline on accumulated pressure maps, with
//! ReLU between layers and the same zero-skipping kernels as the spiking
//! networks.

use serde::{Deserialize, Serialize};

use super::bptt::softmax_cross_entropy;
use super::layers::{Layer, NetworkSpec};
use super::network::{argmax, check_param_shapes};
use super::params::Params;
use super::stats::ForwardStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnOutput {
    pub scores: Vec<f32>,
    pub prediction: usize,
    pub stats: ForwardStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
    pub params: Params,
}

impl Cnn {
    pub fn new(spec: &NetworkSpec, params: Params) -> Result<Self> {
        let layers = spec.resolve()?;
        check_param_shapes(&layers, &params)?;
        Ok(Cnn {
            spec: spec.clone(),
            layers,
            params,
        })
    }

    pub fn forward(&self, map: &[f32]) -> Result<CnnOutput> {
        let n_in = self.layers[0].input_len();
        if map.len() != n_in {
            return Err(Error::domain(format!("input map has {} elements, network expects {n_in}", map.len())));
        }
        let mut acts = Vec::new();
        let mut stats = ForwardStats::new(self.layers.len());
        let scores = forward_record(&self.layers, &self.params, map, &mut acts, Some(&mut stats));
        Ok(CnnOutput {
            prediction: argmax(&scores),
            scores,
            stats,
        })
    }
}

/// Runs the network keeping every layer input in `acts` (`acts[l]` feeds
/// layer `l`). Returns the logits.
pub(crate) fn forward_record(
    layers: &[Layer],
    params: &Params,
    map: &[f32],
    acts: &mut Vec<Vec<f32>>,
    mut stats: Option<&mut ForwardStats>,
) -> Vec<f32> {
    acts.clear();
    acts.push(map.to_vec());
    let last = layers.len() - 1;
    for (l, layer) in layers.iter().enumerate() {
        let lp = &params.layers[l];
        let mut out = vec![0.0f32; layer.output_len()];
        let mut macs = 0;
        let mut nonzero = 0;
        for (i, &x) in acts[l].iter().enumerate() {
            if x != 0.0 {
                nonzero += 1;
                macs += layer.scatter(&lp.weight, i, x, &mut out);
            }
        }
        let mut active = 0;
        for (j, o) in out.iter_mut().enumerate() {
            *o += lp.bias[layer.bias_of(j)];
            if l < last {
                *o = o.max(0.0);
            }
            if *o != 0.0 {
                active += 1;
            }
        }
        if let Some(s) = stats.as_deref_mut() {
            let ls = &mut s.layers[l];
            ls.dense_macs += layer.dense_macs();
            ls.effective_macs += macs;
            ls.input_nonzero += nonzero;
            ls.input_total += layer.input_len() as u64;
            ls.output_active += active;
        }
        acts.push(out);
    }
    if let Some(s) = stats {
        s.time_steps += 1;
    }
    acts.pop().unwrap_or_default()
}

/// Cross-entropy loss of one map; adds the gradient into `grad`.
pub(crate) fn loss_and_grad(
    layers: &[Layer],
    params: &Params,
    map: &[f32],
    label: usize,
    grad: &mut Params,
    acts: &mut Vec<Vec<f32>>,
) -> (f32, Vec<f32>) {
    let logits = forward_record(layers, params, map, acts, None);
    let (loss, mut g) = softmax_cross_entropy(&logits, label);
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let gp = &mut grad.layers[l];
        for (b, chunk) in gp.bias.iter_mut().zip(g.chunks(layer.bias_group())) {
            *b += chunk.iter().sum::<f32>();
        }
        let x = &acts[l];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                layer.weight_grad(&mut gp.weight, i, xi, &g);
            }
        }
        if l > 0 {
            let w = &params.layers[l].weight;
            g = x
                .iter()
                .enumerate()
                .map(|(i, &xi)| if xi > 0.0 { layer.gather(w, i, &g) } else { 0.0 })
                .collect();
        }
    }
    (loss, logits)
}

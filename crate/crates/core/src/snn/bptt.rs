//! Backpropagation through time for LIF layer stacks with a rectangular
//! surrogate spike derivative (width 1 around the threshold). The reset is
//! treated as a constant in the backward pass.

use serde::{Deserialize, Serialize};

use super::layers::Layer;
use super::lif::{LifParams, ResetMode};
use super::params::Params;
use crate::grid::Frames;

/// Training logits: `count_scale · counts + membrane_scale · mean_t U_t`
/// of the output layer. The membrane term keeps a gradient path open for
/// outputs that never reach the surrogate window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpttConfig {
    pub count_scale: f32,
    pub membrane_scale: f32,
}

impl Default for BpttConfig {
    fn default() -> Self {
        BpttConfig {
            count_scale: 2.0,
            membrane_scale: 1.0,
        }
    }
}

/// Rectangular surrogate `∂S/∂U`.
#[inline]
pub fn surrogate(u: f32, threshold: f32) -> f32 {
    if (u - threshold).abs() < 0.5 {
        1.0
    } else {
        0.0
    }
}

/// Reusable buffers for one sample's forward record and backward sweep.
#[derive(Debug, Default)]
pub struct Workspace {
    potentials: Vec<Vec<f32>>,
    events: Vec<Vec<(u32, f32)>>,
    event_start: Vec<Vec<usize>>,
    membrane: Vec<Vec<f32>>,
    grad_u: Vec<Vec<f32>>,
    current: Vec<f32>,
}

impl Workspace {
    fn prepare(&mut self, layers: &[Layer], steps: usize) {
        let n = layers.len();
        self.potentials.resize_with(n, Vec::new);
        self.events.resize_with(n, Vec::new);
        self.event_start.resize_with(n, Vec::new);
        self.membrane.resize_with(n, Vec::new);
        self.grad_u.resize_with(n, Vec::new);
        for (l, layer) in layers.iter().enumerate() {
            let out = layer.output_len();
            self.potentials[l].clear();
            self.potentials[l].resize(steps * out, 0.0);
            self.events[l].clear();
            self.event_start[l].clear();
            self.membrane[l].clear();
            self.membrane[l].resize(out, 0.0);
            self.grad_u[l].clear();
            self.grad_u[l].resize(out, 0.0);
        }
        let widest = layers.iter().map(Layer::output_len).max().unwrap_or(0);
        self.current.resize(widest, 0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleLoss {
    pub loss: f32,
    pub logits: Vec<f32>,
    pub counts: Vec<u32>,
}

/// Numerically stable softmax cross-entropy; returns `(loss, p − onehot)`.
pub fn softmax_cross_entropy(logits: &[f32], label: usize) -> (f32, Vec<f32>) {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f32> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut delta: Vec<f32> = exps.iter().map(|e| e / sum).collect();
    delta[label] -= 1.0;
    (loss, delta)
}

/// Records the forward pass of one sample. The arithmetic order matches
/// the float inference path, so spike counts are identical to it.
pub fn forward_record(
    layers: &[Layer],
    params: &Params,
    lif: &LifParams,
    cfg: &BpttConfig,
    input: &Frames<i8>,
    ws: &mut Workspace,
) -> (Vec<f32>, Vec<u32>) {
    let steps = input.len();
    ws.prepare(layers, steps);
    let last = layers.len() - 1;
    let n_cls = layers[last].output_len();
    let mut counts = vec![0u32; n_cls];
    let mut u_sum = vec![0.0f32; n_cls];
    for t in 0..steps {
        ws.event_start[0].push(ws.events[0].len());
        for (i, &v) in input.frame(t).iter().enumerate() {
            if v != 0 {
                ws.events[0].push((i as u32, v as f32));
            }
        }
        for (l, layer) in layers.iter().enumerate() {
            let out = layer.output_len();
            let lp = &params.layers[l];
            let cur = &mut ws.current[..out];
            cur.fill(0.0);
            let start = ws.event_start[l][t];
            for &(i, v) in &ws.events[l][start..] {
                layer.scatter(&lp.weight, i as usize, v, cur);
            }
            if l < last {
                ws.event_start[l + 1].push(ws.events[l + 1].len());
            }
            let urec = &mut ws.potentials[l][t * out..(t + 1) * out];
            for j in 0..out {
                let c = cur[j] + lp.bias[layer.bias_of(j)];
                let mem = &mut ws.membrane[l][j];
                let u = lif.decay * *mem + c;
                urec[j] = u;
                if l == last {
                    u_sum[j] += u;
                }
                if u >= lif.threshold {
                    *mem = match lif.reset {
                        ResetMode::Subtract => u - lif.threshold,
                        ResetMode::Zero => 0.0,
                    };
                    if l < last {
                        ws.events[l + 1].push((j as u32, 1.0));
                    } else {
                        counts[j] += 1;
                    }
                } else {
                    *mem = u;
                }
            }
        }
    }
    for l in 0..layers.len() {
        ws.event_start[l].push(ws.events[l].len());
    }
    let inv_t = 1.0 / steps.max(1) as f32;
    let logits = counts
        .iter()
        .zip(&u_sum)
        .map(|(&c, &u)| cfg.count_scale * c as f32 + cfg.membrane_scale * inv_t * u)
        .collect();
    (logits, counts)
}

/// Forward plus backward for one sample; adds `∂loss/∂θ` into `grad`.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grad(
    layers: &[Layer],
    params: &Params,
    lif: &LifParams,
    cfg: &BpttConfig,
    input: &Frames<i8>,
    label: usize,
    grad: &mut Params,
    ws: &mut Workspace,
) -> SampleLoss {
    let (logits, counts) = forward_record(layers, params, lif, cfg, input, ws);
    let (loss, delta) = softmax_cross_entropy(&logits, label);
    let steps = input.len();
    let d_count: Vec<f32> = delta.iter().map(|d| cfg.count_scale * d).collect();
    let d_mem: Vec<f32> = delta.iter().map(|d| cfg.membrane_scale / steps.max(1) as f32 * d).collect();
    let last = layers.len() - 1;
    let theta = lif.threshold;

    for t in (0..steps).rev() {
        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let out = layer.output_len();
            let urec = &ws.potentials[l][t * out..(t + 1) * out];
            let (lower, upper) = ws.grad_u.split_at_mut(l + 1);
            let g = &mut lower[l];
            match lif.reset {
                ResetMode::Subtract => g.iter_mut().for_each(|x| *x *= lif.decay),
                ResetMode::Zero => {
                    for (x, &u) in g.iter_mut().zip(urec) {
                        *x *= if u >= theta { 0.0 } else { lif.decay };
                    }
                }
            }
            if l == last {
                for j in 0..out {
                    g[j] += d_count[j] * surrogate(urec[j], theta) + d_mem[j];
                }
            } else {
                let next = &layers[l + 1];
                let w_next = &params.layers[l + 1].weight;
                let g_next = &upper[0];
                for j in 0..out {
                    if surrogate(urec[j], theta) != 0.0 {
                        g[j] += next.gather(w_next, j, g_next);
                    }
                }
            }
            let gp = &mut grad.layers[l];
            let group = layer.bias_group();
            for (b, chunk) in gp.bias.iter_mut().zip(g.chunks(group)) {
                *b += chunk.iter().sum::<f32>();
            }
            let (s, e) = (ws.event_start[l][t], ws.event_start[l][t + 1]);
            for &(i, v) in &ws.events[l][s..e] {
                layer.weight_grad(&mut gp.weight, i as usize, v, g);
            }
        }
    }
    SampleLoss { loss, logits, counts }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_ce_uniform() {
        let (loss, d) = softmax_cross_entropy(&[0.0; 4], 2);
        assert!((loss - 4f32.ln()).abs() < 1e-6);
        assert!((d[2] + 0.75).abs() < 1e-6);
        assert!((d[0] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn surrogate_window() {
        assert_eq!(surrogate(1.0, 1.0), 1.0);
        assert_eq!(surrogate(0.51, 1.0), 1.0);
        assert_eq!(surrogate(0.5, 1.0), 0.0);
        assert_eq!(surrogate(1.6, 1.0), 0.0);
    }
}

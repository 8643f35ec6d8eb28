//! Spiking inference: float and integer (quantized) weights driven by
//! ternary spike tensors, with zero-skipping and MAC instrumentation.

use serde::{Deserialize, Serialize};

use super::layers::{Accum, Layer, NetworkSpec};
use super::lif::{lif_update, LifParams};
use super::params::Params;
use super::quant::{quantize_weights, QuantizedTensor};
use super::stats::ForwardStats;
use crate::error::{Error, Result};
use crate::grid::Frames;

/// Scalar types a spiking layer can accumulate synaptic input in.
pub trait Synaptic: Accum + Send + Sync {
    fn from_spike(v: i8) -> Self;
    fn to_f32(self) -> f32;
}

impl Synaptic for f32 {
    #[inline]
    fn from_spike(v: i8) -> Self {
        v as f32
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self
    }
}

impl Synaptic for i32 {
    #[inline]
    fn from_spike(v: i8) -> Self {
        v as i32
    }
    #[inline]
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// One layer's weights and biases in a common code domain; the synaptic
/// current is `(Σ w·s + b)·scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynapseBank<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub scale: f32,
}

/// Per-layer quantized weights and biases sharing one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    pub weight: QuantizedTensor,
    pub bias: QuantizedTensor,
}

/// Quantizes each layer symmetrically; weights and biases share the
/// layer scale so the integer accumulator needs no rescaling.
pub fn quantize_params(params: &Params, bits: u8) -> Result<Vec<QuantizedLayer>> {
    params
        .layers
        .iter()
        .map(|lp| {
            let nw = lp.weight.len();
            let joint: Vec<f32> = lp.weight.iter().chain(&lp.bias).copied().collect();
            let q = quantize_weights(&joint, bits)?;
            Ok(QuantizedLayer {
                weight: QuantizedTensor {
                    bits,
                    scale: q.scale,
                    codes: q.codes[..nw].to_vec(),
                },
                bias: QuantizedTensor {
                    bits,
                    scale: q.scale,
                    codes: q.codes[nw..].to_vec(),
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpikingWeights {
    Float(Vec<SynapseBank<f32>>),
    Integer(Vec<SynapseBank<i32>>),
}

impl SpikingWeights {
    pub fn is_integer(&self) -> bool {
        matches!(self, SpikingWeights::Integer(_))
    }
}

/// Output of one spiking forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikingOutput {
    /// Output spike counts per class, as reals.
    pub scores: Vec<f32>,
    pub prediction: usize,
    pub stats: ForwardStats,
}

/// Index of the largest score; ties go to the smallest index.
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikingNetwork {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
    pub lif: LifParams,
    pub weights: SpikingWeights,
}

impl SpikingNetwork {
    pub fn from_params(spec: &NetworkSpec, lif: LifParams, params: &Params) -> Result<Self> {
        let layers = spec.resolve()?;
        check_param_shapes(&layers, params)?;
        let banks = params
            .layers
            .iter()
            .map(|lp| SynapseBank {
                weight: lp.weight.clone(),
                bias: lp.bias.clone(),
                scale: 1.0,
            })
            .collect();
        Ok(SpikingNetwork {
            spec: spec.clone(),
            layers,
            lif,
            weights: SpikingWeights::Float(banks),
        })
    }

    pub fn from_quantized(spec: &NetworkSpec, lif: LifParams, q: &[QuantizedLayer]) -> Result<Self> {
        let layers = spec.resolve()?;
        if q.len() != layers.len() {
            return Err(Error::shape(format!("{} weight layers for {} network layers", q.len(), layers.len())));
        }
        for (i, (l, ql)) in layers.iter().zip(q).enumerate() {
            if ql.weight.codes.len() != l.weight_len() || ql.bias.codes.len() != l.bias_len() {
                return Err(Error::shape(format!("layer {i}: quantized tensor size mismatch")));
            }
        }
        let banks = q
            .iter()
            .map(|ql| SynapseBank {
                weight: ql.weight.codes.iter().map(|&c| c as i32).collect(),
                bias: ql.bias.codes.iter().map(|&c| c as i32).collect(),
                scale: ql.weight.scale,
            })
            .collect();
        Ok(SpikingNetwork {
            spec: spec.clone(),
            layers,
            lif,
            weights: SpikingWeights::Integer(banks),
        })
    }

    /// Float network carrying the dequantized values of `q`.
    pub fn dequantized(spec: &NetworkSpec, lif: LifParams, q: &[QuantizedLayer]) -> Result<Self> {
        let params = Params {
            layers: q
                .iter()
                .map(|ql| super::params::LayerParams {
                    weight: ql.weight.dequantize(),
                    bias: ql.bias.dequantize(),
                })
                .collect(),
        };
        Self::from_params(spec, lif, &params)
    }

    pub fn input_len(&self) -> usize {
        self.layers.first().map(Layer::input_len).unwrap_or(0)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map(Layer::output_len).unwrap_or(0)
    }

    /// Zero-skipping forward over all time steps of `input`.
    pub fn forward(&self, input: &Frames<i8>) -> Result<SpikingOutput> {
        self.run(input, false)
    }

    /// Same computation, scattering every input element including zeros.
    /// Scores match [`Self::forward`]; statistics still count only the
    /// nonzero operands.
    pub fn forward_dense(&self, input: &Frames<i8>) -> Result<SpikingOutput> {
        self.run(input, true)
    }

    fn run(&self, input: &Frames<i8>, dense: bool) -> Result<SpikingOutput> {
        if input.frame_size() != self.input_len() {
            return Err(Error::domain(format!(
                "input frames have {} elements, network expects {}",
                input.frame_size(),
                self.input_len()
            )));
        }
        if input.as_slice().iter().any(|v| !(-1..=1).contains(v)) {
            return Err(Error::domain("spike tensor values must be in {-1, 0, +1}"));
        }
        let mut state = SpikingState::new(self);
        for t in 0..input.len() {
            state.step(self, input.frame(t), dense);
        }
        Ok(state.output())
    }
}

pub(crate) fn check_param_shapes(layers: &[Layer], params: &Params) -> Result<()> {
    if params.layers.len() != layers.len() {
        return Err(Error::shape(format!(
            "{} parameter layers for {} network layers",
            params.layers.len(),
            layers.len()
        )));
    }
    for (i, (l, p)) in layers.iter().zip(&params.layers).enumerate() {
        if p.weight.len() != l.weight_len() || p.bias.len() != l.bias_len() {
            return Err(Error::shape(format!(
                "layer {i}: expected {}+{} parameters, got {}+{}",
                l.weight_len(),
                l.bias_len(),
                p.weight.len(),
                p.bias.len()
            )));
        }
    }
    Ok(())
}

enum Acc {
    F(Vec<f32>),
    I(Vec<i32>),
}

/// Membrane state of a network advanced one time step at a time.
pub struct SpikingState {
    membranes: Vec<Vec<f32>>,
    currents: Vec<f32>,
    spikes: Vec<u8>,
    acc: Acc,
    events: Vec<(usize, i8)>,
    next_events: Vec<(usize, i8)>,
    counts: Vec<u32>,
    stats: ForwardStats,
}

impl SpikingState {
    pub fn new(net: &SpikingNetwork) -> Self {
        let widest = net.layers.iter().map(Layer::output_len).max().unwrap_or(0);
        SpikingState {
            membranes: net.layers.iter().map(|l| vec![0.0; l.output_len()]).collect(),
            currents: vec![0.0; widest],
            spikes: vec![0; widest],
            acc: if net.weights.is_integer() {
                Acc::I(vec![0; widest])
            } else {
                Acc::F(vec![0.0; widest])
            },
            events: Vec::new(),
            next_events: Vec::new(),
            counts: vec![0; net.outputs()],
            stats: ForwardStats::new(net.layers.len()),
        }
    }

    /// Advances one time step with the ternary input frame `frame`.
    pub fn step(&mut self, net: &SpikingNetwork, frame: &[i8], dense: bool) {
        self.events.clear();
        self.events
            .extend(frame.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, &v)| (i, v)));
        let last = net.layers.len() - 1;
        for (l, layer) in net.layers.iter().enumerate() {
            let n_out = layer.output_len();
            let n_in = layer.input_len();
            let ls = &mut self.stats.layers[l];
            ls.dense_macs += layer.dense_macs();
            ls.input_total += n_in as u64;
            ls.input_nonzero += self.events.len() as u64;
            let macs = match (&net.weights, &mut self.acc) {
                (SpikingWeights::Float(b), Acc::F(acc)) => {
                    synaptic_currents(layer, &b[l], &self.events, dense, n_in, &mut acc[..n_out], &mut self.currents[..n_out])
                }
                (SpikingWeights::Integer(b), Acc::I(acc)) => {
                    synaptic_currents(layer, &b[l], &self.events, dense, n_in, &mut acc[..n_out], &mut self.currents[..n_out])
                }
                _ => unreachable!("accumulator type follows the weights"),
            };
            if dense {
                ls.effective_macs += self.events.iter().map(|&(i, _)| layer.fan_out(i)).sum::<u64>();
            } else {
                ls.effective_macs += macs;
            }
            let fired = lif_update(
                &mut self.membranes[l],
                &self.currents[..n_out],
                &net.lif,
                &mut self.spikes[..n_out],
            );
            ls.output_active += fired as u64;
            self.next_events.clear();
            for (j, &s) in self.spikes[..n_out].iter().enumerate() {
                if s != 0 {
                    self.next_events.push((j, 1));
                    if l == last {
                        self.counts[j] += 1;
                    }
                }
            }
            std::mem::swap(&mut self.events, &mut self.next_events);
        }
        self.stats.time_steps += 1;
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn stats(&self) -> &ForwardStats {
        &self.stats
    }

    pub fn output(&self) -> SpikingOutput {
        let scores: Vec<f32> = self.counts.iter().map(|&c| c as f32).collect();
        SpikingOutput {
            prediction: argmax(&scores),
            scores,
            stats: self.stats.clone(),
        }
    }
}

fn synaptic_currents<T: Synaptic>(
    layer: &Layer,
    bank: &SynapseBank<T>,
    events: &[(usize, i8)],
    dense: bool,
    n_in: usize,
    acc: &mut [T],
    currents: &mut [f32],
) -> u64 {
    acc.fill(T::default());
    let mut macs = 0;
    if dense {
        let mut values = vec![0i8; n_in];
        for &(i, v) in events {
            values[i] = v;
        }
        for (i, &v) in values.iter().enumerate() {
            macs += layer.scatter(&bank.weight, i, T::from_spike(v), acc);
        }
    } else {
        for &(i, v) in events {
            macs += layer.scatter(&bank.weight, i, T::from_spike(v), acc);
        }
    }
    for (j, (c, &a)) in currents.iter_mut().zip(acc.iter()).enumerate() {
        let mut s = a;
        s += bank.bias[layer.bias_of(j)];
        *c = s.to_f32() * bank.scale;
    }
    macs
}

//! Layer topology, shape resolution and the input-driven (zero-skipping)
//! synaptic kernels shared by every network in the crate.
//!
//! All kernels are written from the input side: one nonzero input element
//! is scattered through its fan-out. A dense layer evaluation is the same
//! scatter applied to every element, so skipping zeros never changes the
//! result, only the MAC count.

use std::ops::{AddAssign, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numeric types the synaptic kernels accumulate in.
pub trait Accum: Copy + Default + AddAssign + Mul<Output = Self> + PartialEq {}
impl Accum for f32 {}
impl Accum for f64 {}
impl Accum for i32 {}
impl Accum for i64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Fc {
        inputs: usize,
        outputs: usize,
    },
}

/// Resolved convolution geometry. Weights are `[out][in][ky][kx]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn new(in_ch: usize, in_h: usize, in_w: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
            return Err(Error::shape("convolution with a zero dimension"));
        }
        if in_h + 2 * padding < kernel || in_w + 2 * padding < kernel {
            return Err(Error::shape(format!(
                "{kernel}×{kernel} kernel larger than padded {in_h}×{in_w} input"
            )));
        }
        Ok(ConvGeom {
            in_ch,
            in_h,
            in_w,
            out_ch,
            out_h: (in_h + 2 * padding - kernel) / stride + 1,
            out_w: (in_w + 2 * padding - kernel) / stride + 1,
            kernel,
            stride,
            padding,
        })
    }

    fn weight_index(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.in_ch + ci) * self.kernel + ky) * self.kernel + kx
    }

    /// Output coordinate reached from input coordinate `i` through kernel tap
    /// `k`, if any.
    #[inline]
    fn out_coord(&self, i: usize, k: usize, out_len: usize) -> Option<usize> {
        let num = (i + self.padding).checked_sub(k)?;
        if num % self.stride != 0 {
            return None;
        }
        let o = num / self.stride;
        (o < out_len).then_some(o)
    }

    /// Calls `f(weight_index_base, output_index_base)` for each valid kernel
    /// tap of input element `idx`; the caller walks output channels with
    /// strides `in_ch·k²` (weights) and `out_h·out_w` (outputs).
    #[inline]
    fn for_each_tap(&self, idx: usize, mut f: impl FnMut(usize, usize)) {
        let plane = self.in_h * self.in_w;
        let ci = idx / plane;
        let iy = (idx % plane) / self.in_w;
        let ix = idx % self.in_w;
        for ky in 0..self.kernel {
            let Some(oy) = self.out_coord(iy, ky, self.out_h) else { continue };
            for kx in 0..self.kernel {
                let Some(ox) = self.out_coord(ix, kx, self.out_w) else { continue };
                f(self.weight_index(0, ci, ky, kx), oy * self.out_w + ox);
            }
        }
    }
}

/// A layer with resolved input/output shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Conv(ConvGeom),
    Fc { inputs: usize, outputs: usize },
}

impl Layer {
    pub fn input_len(&self) -> usize {
        match self {
            Layer::Conv(g) => g.in_ch * g.in_h * g.in_w,
            Layer::Fc { inputs, .. } => *inputs,
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            Layer::Conv(g) => g.out_ch * g.out_h * g.out_w,
            Layer::Fc { outputs, .. } => *outputs,
        }
    }

    pub fn weight_len(&self) -> usize {
        match self {
            Layer::Conv(g) => g.out_ch * g.in_ch * g.kernel * g.kernel,
            Layer::Fc { inputs, outputs } => inputs * outputs,
        }
    }

    pub fn bias_len(&self) -> usize {
        match self {
            Layer::Conv(g) => g.out_ch,
            Layer::Fc { outputs, .. } => *outputs,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.bias_len()
    }

    /// Bias slot feeding output element `j`.
    #[inline]
    pub fn bias_of(&self, j: usize) -> usize {
        match self {
            Layer::Conv(g) => j / (g.out_h * g.out_w),
            Layer::Fc { .. } => j,
        }
    }

    /// Output elements per bias slot (the spatial plane for convolutions).
    pub fn bias_group(&self) -> usize {
        match self {
            Layer::Conv(g) => g.out_h * g.out_w,
            Layer::Fc { .. } => 1,
        }
    }

    /// Multiply-accumulates of a dense evaluation, counting padded taps.
    pub fn dense_macs(&self) -> u64 {
        match self {
            Layer::Conv(g) => (g.out_ch * g.out_h * g.out_w * g.in_ch * g.kernel * g.kernel) as u64,
            Layer::Fc { inputs, outputs } => (inputs * outputs) as u64,
        }
    }

    /// Number of multiplications input element `idx` takes part in.
    pub fn fan_out(&self, idx: usize) -> u64 {
        match self {
            Layer::Conv(g) => {
                let mut taps = 0u64;
                g.for_each_tap(idx, |_, _| taps += 1);
                taps * g.out_ch as u64
            }
            Layer::Fc { outputs, .. } => *outputs as u64,
        }
    }

    /// Scatters `value·w` from input element `idx` into `out`. Returns the
    /// number of multiply-accumulates performed.
    #[inline]
    pub fn scatter<T: Accum>(&self, w: &[T], idx: usize, value: T, out: &mut [T]) -> u64 {
        match self {
            Layer::Conv(g) => {
                let w_stride = g.in_ch * g.kernel * g.kernel;
                let o_stride = g.out_h * g.out_w;
                let mut macs = 0;
                g.for_each_tap(idx, |wb, ob| {
                    for co in 0..g.out_ch {
                        out[ob + co * o_stride] += value * w[wb + co * w_stride];
                    }
                    macs += g.out_ch as u64;
                });
                macs
            }
            Layer::Fc { inputs, outputs } => {
                for (o, acc) in out.iter_mut().enumerate().take(*outputs) {
                    *acc += value * w[o * inputs + idx];
                }
                *outputs as u64
            }
        }
    }

    /// `Σ_o w[o, idx]·grad_out[o]`: gradient reaching input element `idx`.
    #[inline]
    pub fn gather(&self, w: &[f32], idx: usize, grad_out: &[f32]) -> f32 {
        match self {
            Layer::Conv(g) => {
                let w_stride = g.in_ch * g.kernel * g.kernel;
                let o_stride = g.out_h * g.out_w;
                let mut sum = 0.0;
                g.for_each_tap(idx, |wb, ob| {
                    for co in 0..g.out_ch {
                        sum += w[wb + co * w_stride] * grad_out[ob + co * o_stride];
                    }
                });
                sum
            }
            Layer::Fc { inputs, outputs } => (0..*outputs).map(|o| w[o * inputs + idx] * grad_out[o]).sum(),
        }
    }

    /// Accumulates `∂L/∂w` contributions of input element `idx` with `value`.
    #[inline]
    pub fn weight_grad(&self, gw: &mut [f32], idx: usize, value: f32, grad_out: &[f32]) {
        match self {
            Layer::Conv(g) => {
                let w_stride = g.in_ch * g.kernel * g.kernel;
                let o_stride = g.out_h * g.out_w;
                g.for_each_tap(idx, |wb, ob| {
                    for co in 0..g.out_ch {
                        gw[wb + co * w_stride] += value * grad_out[ob + co * o_stride];
                    }
                });
            }
            Layer::Fc { inputs, outputs } => {
                for o in 0..*outputs {
                    gw[o * inputs + idx] += value * grad_out[o];
                }
            }
        }
    }
}

/// One nonzero input of a convolution: channel, row, column, value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvEvent {
    pub channel: usize,
    pub row: usize,
    pub col: usize,
    pub value: i32,
}

/// Zero-skipping integer convolution of one time step: each event scatters
/// `value × kernel` into the accumulators. Returns the MAC count, which is
/// `kernel² · out_channels` for an interior event and less at the borders.
pub fn event_driven_conv(events: &[ConvEvent], kernel: &[i32], geom: &ConvGeom, acc: &mut [i32]) -> u64 {
    let layer = Layer::Conv(*geom);
    debug_assert_eq!(kernel.len(), layer.weight_len());
    debug_assert_eq!(acc.len(), layer.output_len());
    events
        .iter()
        .map(|e| {
            let idx = (e.channel * geom.in_h + e.row) * geom.in_w + e.col;
            layer.scatter(kernel, idx, e.value, acc)
        })
        .sum()
}

/// Layer stack with an input shape `(channels, height, width)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

pub const NUM_CLASSES: usize = 9;

impl NetworkSpec {
    /// conv 1→8 (3×3, pad 1), conv 8→30 (3×3, pad 1), FC 7680→9.
    pub fn conv_default() -> Self {
        NetworkSpec {
            input: (1, 16, 16),
            layers: vec![
                LayerSpec::Conv { in_channels: 1, out_channels: 8, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Conv { in_channels: 8, out_channels: 30, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Fc { inputs: 30 * 16 * 16, outputs: NUM_CLASSES },
            ],
        }
    }

    /// 256 → `hidden` → 9 fully connected.
    pub fn fc_default(hidden: usize) -> Self {
        NetworkSpec {
            input: (1, 16, 16),
            layers: vec![
                LayerSpec::Fc { inputs: 256, outputs: hidden },
                LayerSpec::Fc { inputs: hidden, outputs: NUM_CLASSES },
            ],
        }
    }

    /// Checks that shapes chain and returns the resolved layers.
    pub fn resolve(&self) -> Result<Vec<Layer>> {
        let (mut c, mut h, mut w) = self.input;
        let mut flat = c * h * w;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            match *spec {
                LayerSpec::Conv { in_channels, out_channels, kernel, stride, padding } => {
                    if h == 0 || in_channels != c || flat != c * h * w {
                        return Err(Error::shape(format!(
                            "layer {i}: conv expects {in_channels} channels, previous layer gives {c}×{h}×{w}"
                        )));
                    }
                    let g = ConvGeom::new(in_channels, h, w, out_channels, kernel, stride, padding)?;
                    (c, h, w) = (g.out_ch, g.out_h, g.out_w);
                    flat = c * h * w;
                    out.push(Layer::Conv(g));
                }
                LayerSpec::Fc { inputs, outputs } => {
                    if inputs != flat || outputs == 0 {
                        return Err(Error::shape(format!(
                            "layer {i}: fc expects {inputs} inputs, previous layer gives {flat}"
                        )));
                    }
                    flat = outputs;
                    h = 0;
                    out.push(Layer::Fc { inputs, outputs });
                }
            }
        }
        Ok(out)
    }

    pub fn outputs(&self) -> usize {
        self.resolve()
            .ok()
            .and_then(|l| l.last().map(Layer::output_len))
            .unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.resolve()
            .map(|ls| ls.iter().map(Layer::param_count).sum())
            .unwrap_or(0)
    }

    pub fn dense_macs(&self) -> Vec<u64> {
        self.resolve()
            .map(|ls| ls.iter().map(Layer::dense_macs).collect())
            .unwrap_or_default()
    }
}

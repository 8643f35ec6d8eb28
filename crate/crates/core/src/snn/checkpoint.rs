//! Versioned little-endian weight checkpoint.
//!
//! ```text
//! "ESKW" | version u8 | kind u8 | bits u8 (0 = f32) | reserved u8
//! decay f32 | threshold f32 | reset u8 | 3 × pad
//! input channels, height, width: u16 | layer count u16
//! layer table: per layer a tag u8 (0 conv, 1 fc) and five u32 fields
//!   conv: in, out, kernel, stride, padding; fc: inputs, outputs, 0, 0, 0
//! per layer: scale f32 | weight count u32 | bias count u32
//!   | weights | biases   (i8 codes, or f32 when bits = 0)
//! ```

use std::path::Path;

use super::cnn::Cnn;
use super::layers::{Layer, LayerSpec, NetworkSpec};
use super::lif::{LifParams, ResetMode};
use super::network::{QuantizedLayer, SpikingNetwork};
use super::params::{LayerParams, Params};
use super::quant::QuantizedTensor;
use super::NetworkKind;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ESKW";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointWeights {
    Float(Params),
    Quantized(Vec<QuantizedLayer>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: NetworkKind,
    pub spec: NetworkSpec,
    pub lif: LifParams,
    pub weights: CheckpointWeights,
}

/// A network ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Cnn(Cnn),
    Spiking(SpikingNetwork),
}

impl Checkpoint {
    pub fn bits(&self) -> u8 {
        match &self.weights {
            CheckpointWeights::Float(_) => 0,
            CheckpointWeights::Quantized(q) => q.first().map(|l| l.weight.bits).unwrap_or(0),
        }
    }

    pub fn model(&self) -> Result<Model> {
        match (&self.weights, self.kind) {
            (CheckpointWeights::Float(p), NetworkKind::Cnn) => Ok(Model::Cnn(Cnn::new(&self.spec, p.clone())?)),
            (CheckpointWeights::Quantized(q), NetworkKind::Cnn) => {
                let params = Params {
                    layers: q
                        .iter()
                        .map(|l| LayerParams {
                            weight: l.weight.dequantize(),
                            bias: l.bias.dequantize(),
                        })
                        .collect(),
                };
                Ok(Model::Cnn(Cnn::new(&self.spec, params)?))
            }
            (CheckpointWeights::Float(p), _) => Ok(Model::Spiking(SpikingNetwork::from_params(&self.spec, self.lif, p)?)),
            (CheckpointWeights::Quantized(q), _) => {
                Ok(Model::Spiking(SpikingNetwork::from_quantized(&self.spec, self.lif, q)?))
            }
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layers = self.spec.resolve()?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.push(match self.kind {
            NetworkKind::Cnn => 0,
            NetworkKind::Snn => 1,
            NetworkKind::ConvSnn => 2,
        });
        out.push(self.bits());
        out.push(0);
        out.extend_from_slice(&self.lif.decay.to_le_bytes());
        out.extend_from_slice(&self.lif.threshold.to_le_bytes());
        out.push(match self.lif.reset {
            ResetMode::Subtract => 0,
            ResetMode::Zero => 1,
        });
        out.extend_from_slice(&[0; 3]);
        let (c, h, w) = self.spec.input;
        for v in [c, h, w, self.spec.layers.len()] {
            out.extend_from_slice(&u16::try_from(v).map_err(|_| ck("dimension exceeds u16"))?.to_le_bytes());
        }
        for l in &self.spec.layers {
            let (tag, f) = match *l {
                LayerSpec::Conv { in_channels, out_channels, kernel, stride, padding } => {
                    (0u8, [in_channels, out_channels, kernel, stride, padding])
                }
                LayerSpec::Fc { inputs, outputs } => (1u8, [inputs, outputs, 0, 0, 0]),
            };
            out.push(tag);
            for v in f {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        match &self.weights {
            CheckpointWeights::Float(p) => {
                check_counts(&layers, p.layers.iter().map(|l| (l.weight.len(), l.bias.len())))?;
                for lp in &p.layers {
                    out.extend_from_slice(&1.0f32.to_le_bytes());
                    out.extend_from_slice(&(lp.weight.len() as u32).to_le_bytes());
                    out.extend_from_slice(&(lp.bias.len() as u32).to_le_bytes());
                    for v in lp.weight.iter().chain(&lp.bias) {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            CheckpointWeights::Quantized(q) => {
                check_counts(&layers, q.iter().map(|l| (l.weight.codes.len(), l.bias.codes.len())))?;
                for ql in q {
                    out.extend_from_slice(&ql.weight.scale.to_le_bytes());
                    out.extend_from_slice(&(ql.weight.codes.len() as u32).to_le_bytes());
                    out.extend_from_slice(&(ql.bias.codes.len() as u32).to_le_bytes());
                    out.extend(ql.weight.codes.iter().chain(&ql.bias.codes).map(|&c| c as u8));
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ck(format!("bad magic {magic:02x?}")));
        }
        let version = r.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(ck(format!("unsupported version {version}")));
        }
        let kind = match r.u8()? {
            0 => NetworkKind::Cnn,
            1 => NetworkKind::Snn,
            2 => NetworkKind::ConvSnn,
            k => return Err(ck(format!("unknown network kind {k}"))),
        };
        let bits = r.u8()?;
        if bits != 0 && !(2..=8).contains(&bits) {
            return Err(ck(format!("invalid bit width {bits}")));
        }
        r.u8()?;
        let decay = r.f32()?;
        let threshold = r.f32()?;
        let reset = match r.u8()? {
            0 => ResetMode::Subtract,
            1 => ResetMode::Zero,
            m => return Err(ck(format!("unknown reset mode {m}"))),
        };
        r.take(3)?;
        let lif = LifParams { decay, threshold, reset };
        if !lif.is_valid() {
            return Err(ck("invalid LIF parameters"));
        }
        let input = (r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
        let n_layers = r.u16()? as usize;
        let mut specs = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let tag = r.u8()?;
            let mut f = [0usize; 5];
            for v in &mut f {
                *v = r.u32()? as usize;
            }
            specs.push(match tag {
                0 => LayerSpec::Conv {
                    in_channels: f[0],
                    out_channels: f[1],
                    kernel: f[2],
                    stride: f[3],
                    padding: f[4],
                },
                1 => LayerSpec::Fc { inputs: f[0], outputs: f[1] },
                t => return Err(ck(format!("unknown layer tag {t}"))),
            });
        }
        let spec = NetworkSpec { input, layers: specs };
        let layers = spec.resolve().map_err(|e| ck(format!("layer table: {e}")))?;
        let weights = if bits == 0 {
            let mut ps = Vec::with_capacity(n_layers);
            for l in &layers {
                let (_, nw, nb) = r.layer_header(l)?;
                let mut vals = Vec::with_capacity(nw + nb);
                for _ in 0..nw + nb {
                    vals.push(r.f32()?);
                }
                let bias = vals.split_off(nw);
                ps.push(LayerParams { weight: vals, bias });
            }
            CheckpointWeights::Float(Params { layers: ps })
        } else {
            let (lo, hi) = QuantizedTensor::code_range(bits);
            let mut qs = Vec::with_capacity(n_layers);
            for l in &layers {
                let (scale, nw, nb) = r.layer_header(l)?;
                if !(scale.is_finite() && scale >= 0.0) {
                    return Err(ck("invalid layer scale"));
                }
                let mut codes: Vec<i8> = r.take(nw + nb)?.iter().map(|&b| b as i8).collect();
                if codes.iter().any(|&c| (c as i32) < lo || (c as i32) > hi) {
                    return Err(ck(format!("code outside the {bits}-bit range")));
                }
                let bias = codes.split_off(nw);
                qs.push(QuantizedLayer {
                    weight: QuantizedTensor { bits, scale, codes },
                    bias: QuantizedTensor { bits, scale, codes: bias },
                });
            }
            CheckpointWeights::Quantized(qs)
        };
        if r.pos != bytes.len() {
            return Err(ck(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { kind, spec, lif, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn check_counts(layers: &[Layer], counts: impl ExactSizeIterator<Item = (usize, usize)>) -> Result<()> {
    if counts.len() != layers.len() {
        return Err(ck("weight layer count differs from the layer table"));
    }
    for (i, (l, (w, b))) in layers.iter().zip(counts).enumerate() {
        if w != l.weight_len() || b != l.bias_len() {
            return Err(ck(format!("layer {i}: tensor sizes do not match the layer table")));
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ck(format!("truncated at byte {} (need {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn layer_header(&mut self, l: &Layer) -> Result<(f32, usize, usize)> {
        let scale = self.f32()?;
        let nw = self.u32()? as usize;
        let nb = self.u32()? as usize;
        if nw != l.weight_len() || nb != l.bias_len() {
            return Err(ck("tensor sizes do not match the layer table"));
        }
        Ok((scale, nw, nb))
    }
}

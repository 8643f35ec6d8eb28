//! Symmetric per-layer weight quantization and weight-memory accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer codes of one tensor with the scale that dequantizes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub bits: u8,
    pub scale: f32,
    pub codes: Vec<i8>,
}

impl QuantizedTensor {
    pub fn code_range(bits: u8) -> (i32, i32) {
        let half = 1i32 << (bits - 1);
        (-half, half - 1)
    }

    pub fn dequantize(&self) -> Vec<f32> {
        self.codes.iter().map(|&c| c as f32 * self.scale).collect()
    }
}

/// `scale = max|w| / (2^(bits−1) − 1)`, codes rounded half-to-even. The
/// code is computed as `w·(2^(bits−1) − 1)/max|w|` in f64 so exact ties stay
/// exact. An all-zero tensor gets scale 0 and zero codes.
pub fn quantize_weights(weights: &[f32], bits: u8) -> Result<QuantizedTensor> {
    if !(2..=8).contains(&bits) {
        return Err(Error::domain(format!("{bits}-bit quantization outside 2..=8")));
    }
    let max_abs = weights.iter().fold(0.0f32, |m, w| m.max(w.abs()));
    if !max_abs.is_finite() {
        return Err(Error::domain("non-finite weight"));
    }
    let (lo, hi) = QuantizedTensor::code_range(bits);
    if max_abs == 0.0 {
        return Ok(QuantizedTensor {
            bits,
            scale: 0.0,
            codes: vec![0; weights.len()],
        });
    }
    let scale = max_abs / hi as f32;
    let codes = weights
        .iter()
        .map(|&w| {
            let q = (w as f64 * hi as f64 / max_abs as f64).round_ties_even();
            (q as i32).clamp(lo, hi) as i8
        })
        .collect();
    Ok(QuantizedTensor { bits, scale, codes })
}

/// Bytes needed to store `parameter_count` parameters at `bits` each.
pub fn weight_memory_bytes(parameter_count: u64, bits: u32) -> u64 {
    (parameter_count * bits as u64).div_ceil(8)
}

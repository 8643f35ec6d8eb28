//! Piezoresistive taxel model, parallel-feedback readout amplifier and ADC.
//!
//! Enabling several rows while sensing one column places those taxels in
//! parallel on the sense line. A single pressed taxel (kΩ) dominates a
//! column of unpressed ones (GΩ), which is what makes group reads usable as
//! activity detectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LineSet, MAX_LINES};

/// Contact pressure map (kPa) of the array at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureField {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl PressureField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows <= MAX_LINES && cols <= MAX_LINES, "array larger than {MAX_LINES} lines");
        PressureField {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows > MAX_LINES || cols > MAX_LINES {
            return Err(Error::domain(format!("unsupported array size {rows}×{cols}")));
        }
        if values.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} pressures for a {rows}×{cols} array",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::domain(format!("pressure {v} kPa is negative or not finite")));
        }
        Ok(PressureField { rows, cols, values })
    }

    /// A field with one taxel pressed at `pressure` kPa.
    pub fn single_touch(rows: usize, cols: usize, at: (usize, usize), pressure: f32) -> Self {
        let mut f = Self::zeros(rows, cols);
        f.set(at.0, at.1, pressure);
        f
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    /// Sets one taxel; negative pressures are clamped to zero.
    pub fn set(&mut self, row: usize, col: usize, pressure: f32) {
        self.values[row * self.cols + col] = pressure.max(0.0);
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }
}

/// Resistance–pressure law of one taxel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxelModel {
    /// Fully pressed resistance floor, Ω.
    pub r_min: f64,
    /// Unpressed resistance, Ω.
    pub r_off: f64,
    /// Pressure at which the floor is reached, kPa.
    pub p_ref: f64,
}

impl Default for TaxelModel {
    fn default() -> Self {
        TaxelModel {
            r_min: 3e3,
            r_off: 1e9,
            p_ref: 500.0,
        }
    }
}

impl TaxelModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min < self.r_off && self.p_ref > 0.0) {
            return Err(Error::domain(format!("invalid taxel model {self:?}")));
        }
        Ok(())
    }
}

/// Readout amplifier and ADC settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontEndConfig {
    /// Reference voltage, V.
    pub v_ref: f64,
    /// Feedback resistor, Ω.
    pub r_f: f64,
    pub adc_bits: u8,
    /// ADC input range upper bound, V.
    pub adc_full_scale: f64,
    /// Standard deviation of additive voltage noise, V. Zero disables noise.
    #[serde(default)]
    pub noise_sigma: f64,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        FrontEndConfig {
            v_ref: 2.5,
            r_f: 100e3,
            adc_bits: 12,
            adc_full_scale: 2.5,
            noise_sigma: 0.0,
        }
    }
}

impl FrontEndConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.v_ref > 0.0
            && self.r_f > 0.0
            && (1..=16).contains(&self.adc_bits)
            && self.adc_full_scale > 0.0
            && self.noise_sigma >= 0.0;
        if !ok {
            return Err(Error::domain(format!("invalid front-end config {self:?}")));
        }
        Ok(())
    }

    pub fn max_code(&self) -> u16 {
        ((1u32 << self.adc_bits) - 1) as u16
    }
}

/// Inverse pressure law `r_min·p_ref/p`, clamped to `[r_min, r_off]`.
pub fn pressure_to_resistance(p: f64, model: &TaxelModel) -> Result<f64> {
    if p.is_nan() || p < 0.0 {
        return Err(Error::domain(format!("negative pressure {p} kPa")));
    }
    if p == 0.0 {
        return Ok(model.r_off);
    }
    Ok((model.r_min * model.p_ref / p).clamp(model.r_min, model.r_off))
}

pub fn parallel_resistance(resistances: &[f64]) -> Result<f64> {
    if resistances.is_empty() {
        return Err(Error::domain("parallel network of zero elements"));
    }
    if let Some(r) = resistances.iter().find(|r| r.is_nan() || **r <= 0.0) {
        return Err(Error::domain(format!("non-positive resistance {r} Ω")));
    }
    let conductance: f64 = resistances.iter().map(|r| 1.0 / r).sum();
    Ok(1.0 / conductance)
}

/// Baseline-subtracted amplifier output `V_ref·R_f/R_s`, clamped to the ADC
/// input range.
pub fn readout_voltage(r_s: f64, cfg: &FrontEndConfig) -> Result<f64> {
    if r_s.is_nan() || r_s <= 0.0 {
        return Err(Error::domain(format!("non-positive sensor resistance {r_s} Ω")));
    }
    Ok((cfg.v_ref * cfg.r_f / r_s).clamp(0.0, cfg.adc_full_scale))
}

pub fn adc_sample(v: f64, cfg: &FrontEndConfig) -> u16 {
    let max = cfg.max_code() as f64;
    let code = (v / cfg.adc_full_scale * max).round();
    // NaN and negatives land on 0
    if code >= max {
        cfg.max_code()
    } else if code > 0.0 {
        code as u16
    } else {
        0
    }
}

/// Equivalent resistance of the taxels at `rows × cols` wired in parallel.
fn group_resistance(
    field: &PressureField,
    rows: LineSet,
    cols: LineSet,
    model: &TaxelModel,
) -> Result<f64> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::domain("group read with no enabled rows or columns"));
    }
    if rows.span() > field.rows() || cols.span() > field.cols() {
        return Err(Error::domain(format!(
            "group {}/{} outside {}×{} array",
            rows.to_hex(),
            cols.to_hex(),
            field.rows(),
            field.cols()
        )));
    }
    let mut conductance = 0.0;
    for r in rows.iter() {
        for c in cols.iter() {
            conductance += 1.0 / pressure_to_resistance(field.get(r, c) as f64, model)?;
        }
    }
    Ok(1.0 / conductance)
}

/// One noiseless scan: the enabled rows of column `col` in parallel, through
/// the amplifier and ADC.
pub fn column_group_read(
    field: &PressureField,
    enabled_rows: LineSet,
    col: usize,
    model: &TaxelModel,
    cfg: &FrontEndConfig,
) -> Result<u16> {
    let r = group_resistance(field, enabled_rows, LineSet::single(col), model)?;
    Ok(adc_sample(readout_voltage(r, cfg)?, cfg))
}

/// The crossbar plus front-end as seen by a scan controller. Carries the
/// optional noise source, so unlike the free functions it is stateful.
#[derive(Debug, Clone)]
pub struct Crossbar {
    pub model: TaxelModel,
    pub front_end: FrontEndConfig,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl Crossbar {
    pub fn new(model: TaxelModel, front_end: FrontEndConfig) -> Result<Self> {
        Self::with_noise_seed(model, front_end, 0)
    }

    pub fn with_noise_seed(model: TaxelModel, front_end: FrontEndConfig, seed: u64) -> Result<Self> {
        model.validate()?;
        front_end.validate()?;
        let noise = if front_end.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, front_end.noise_sigma)
                .map_err(|e| Error::domain(format!("noise: {e}")))?;
            Some((normal, ChaCha8Rng::seed_from_u64(seed)))
        } else {
            None
        };
        Ok(Crossbar {
            model,
            front_end,
            noise,
        })
    }

    /// One scan over an arbitrary rectangle of rows × columns.
    pub fn read_group(&mut self, field: &PressureField, rows: LineSet, cols: LineSet) -> Result<u16> {
        let r = group_resistance(field, rows, cols, &self.model)?;
        let cfg = &self.front_end;
        let mut v = cfg.v_ref * cfg.r_f / r;
        if let Some((normal, rng)) = self.noise.as_mut() {
            v += normal.sample(rng);
        }
        Ok(adc_sample(v.clamp(0.0, cfg.adc_full_scale), cfg))
    }

    pub fn read_taxel(&mut self, field: &PressureField, row: usize, col: usize) -> Result<u16> {
        self.read_group(field, LineSet::single(row), LineSet::single(col))
    }

    /// Noise-free code of a fully enabled column with every taxel unpressed.
    pub fn idle_column_code(&self, rows: usize) -> u16 {
        let r = self.model.r_off / rows as f64;
        let cfg = &self.front_end;
        adc_sample((cfg.v_ref * cfg.r_f / r).clamp(0.0, cfg.adc_full_scale), cfg)
    }
}

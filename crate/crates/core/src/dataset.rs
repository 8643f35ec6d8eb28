//! Synthetic handwritten-digit pressure sequences, their acquisition through
//! the scan pipeline, and dataset assembly/persistence.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{delta_encode, read_aer, write_aer, EventStream};
use crate::error::{Error, Result};
use crate::grid::Frames;
use crate::scan::{ScanConfig, Tracker};
use crate::sensor::{Crossbar, FrontEndConfig, PressureField, TaxelModel};
use crate::{ARRAY_SIDE, FRAME_RATE_HZ, SAMPLE_FRAMES};

/// Footprint standard deviation in taxel pitches.
pub const FOOTPRINT_SIGMA: f64 = 0.6;
pub const MAX_PRESSURE_KPA: f64 = 500.0;
pub const MIN_PEAK_KPA: f64 = 100.0;

pub const DEFAULT_PER_CLASS: usize = 85;
pub const DEFAULT_STYLES: usize = 13;
pub const DEFAULT_SEED: u64 = 1;

/// Stroke control points on the unit square (x right, y down), one
/// continuous stroke per digit.
fn template(digit: u8) -> &'static [(f64, f64)] {
    match digit {
        1 => &[(0.47, 0.12), (0.5, 0.5), (0.53, 0.88)],
        2 => &[
            (0.25, 0.3),
            (0.38, 0.13),
            (0.62, 0.12),
            (0.75, 0.28),
            (0.66, 0.5),
            (0.25, 0.88),
            (0.8, 0.88),
        ],
        3 => &[
            (0.25, 0.15),
            (0.68, 0.13),
            (0.72, 0.33),
            (0.45, 0.5),
            (0.75, 0.64),
            (0.7, 0.84),
            (0.48, 0.9),
            (0.24, 0.83),
        ],
        4 => &[(0.66, 0.9), (0.64, 0.1), (0.2, 0.62), (0.84, 0.62)],
        5 => &[
            (0.76, 0.12),
            (0.3, 0.12),
            (0.27, 0.46),
            (0.55, 0.4),
            (0.76, 0.56),
            (0.73, 0.8),
            (0.5, 0.9),
            (0.24, 0.82),
        ],
        6 => &[
            (0.7, 0.1),
            (0.42, 0.28),
            (0.27, 0.6),
            (0.36, 0.86),
            (0.6, 0.9),
            (0.74, 0.72),
            (0.6, 0.54),
            (0.3, 0.62),
        ],
        7 => &[(0.2, 0.12), (0.8, 0.12), (0.45, 0.9)],
        8 => &[
            (0.7, 0.2),
            (0.5, 0.1),
            (0.3, 0.22),
            (0.5, 0.48),
            (0.74, 0.7),
            (0.5, 0.9),
            (0.26, 0.7),
            (0.5, 0.48),
            (0.7, 0.22),
        ],
        9 => &[
            (0.72, 0.26),
            (0.5, 0.1),
            (0.28, 0.26),
            (0.48, 0.46),
            (0.72, 0.28),
            (0.7, 0.9),
        ],
        _ => &[],
    }
}

/// One pen sample: time (s), position on the unit square, pressure (kPa).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokePoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub pressure: f64,
}

/// Writer style: a fixed affine warp and pressure/speed habits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Style {
    pub scale: f64,
    pub rotation_deg: f64,
    /// Translation in taxel pitches.
    pub shift: (f64, f64),
    pub peak_pressure: f64,
    /// Writing duration in seconds.
    pub duration: f64,
}

impl Style {
    pub fn from_seed(style_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(style_seed ^ 0x5eed_5717_e000_u64);
        Style {
            scale: rng.random_range(0.9..=1.1),
            rotation_deg: rng.random_range(-5.0..=5.0),
            shift: (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)),
            peak_pressure: rng.random_range(150.0..=450.0),
            duration: rng.random_range(0.55..=0.8),
        }
    }
}

fn polyline_point(points: &[(f64, f64)], cumulative: &[f64], s: f64) -> (f64, f64) {
    let total = *cumulative.last().expect("non-empty");
    let target = s.clamp(0.0, 1.0) * total;
    let seg = cumulative
        .windows(2)
        .position(|w| target <= w[1])
        .unwrap_or(points.len() - 2);
    let len = cumulative[seg + 1] - cumulative[seg];
    let u = if len > 0.0 { (target - cumulative[seg]) / len } else { 0.0 };
    let (a, b) = (points[seg], points[seg + 1]);
    (a.0 + (b.0 - a.0) * u, a.1 + (b.1 - a.1) * u)
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Pen path of one digit: the per-digit template, warped by the writer's
/// style and by per-sample jitter, traversed once at frame-rate resolution.
pub fn gen_digit_trajectory(digit: u8, style_seed: u64, rng_seed: u64) -> Result<Vec<StrokePoint>> {
    if !(1..=9).contains(&digit) {
        return Err(Error::domain(format!("digit {digit} outside 1..=9")));
    }
    let style = Style::from_seed(style_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pitch = 1.0 / (ARRAY_SIDE - 1) as f64;

    // per-sample jitter around the style
    let scale = style.scale * rng.random_range(0.97..=1.03);
    let rot = (style.rotation_deg + rng.random_range(-1.5..=1.5)).to_radians();
    let shift = (
        (style.shift.0 + rng.random_range(-0.3..=0.3)) * pitch,
        (style.shift.1 + rng.random_range(-0.3..=0.3)) * pitch,
    );
    let (sin, cos) = rot.sin_cos();
    let points: Vec<(f64, f64)> = template(digit)
        .iter()
        .map(|&(x, y)| {
            let (dx, dy) = ((x - 0.5) * scale, (y - 0.5) * scale);
            let xr = 0.5 + dx * cos - dy * sin + shift.0;
            let yr = 0.5 + dx * sin + dy * cos + shift.1;
            (xr.clamp(0.0, 1.0), yr.clamp(0.0, 1.0))
        })
        .collect();
    let mut cumulative = vec![0.0];
    for w in points.windows(2) {
        let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        cumulative.push(cumulative.last().unwrap() + d);
    }

    let duration = style.duration * rng.random_range(0.9..=1.1);
    let window = SAMPLE_FRAMES as f64 / FRAME_RATE_HZ as f64;
    let start = rng.random_range(0.1..=(window - duration - 0.1).max(0.1));
    let peak = (style.peak_pressure * rng.random_range(0.9..=1.1)).clamp(MIN_PEAK_KPA, MAX_PRESSURE_KPA);
    // speed warp: s(u) = u + a·sin(2πu)/(2π) stays monotone for |a| < 1
    let warp = rng.random_range(-0.35..=0.35);
    let ramp = 0.06;

    let dt = 1.0 / FRAME_RATE_HZ as f64;
    let steps = (duration / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let u = k as f64 / steps as f64;
        let s = u + warp * (2.0 * PI * u).sin() / (2.0 * PI);
        let (x, y) = polyline_point(&points, &cumulative, s);
        let t_rel = u * duration;
        let env = smoothstep(t_rel / ramp).min(smoothstep((duration - t_rel) / ramp));
        out.push(StrokePoint {
            t: start + t_rel,
            x,
            y,
            pressure: peak * env,
        });
    }
    Ok(out)
}

/// Pen state at time `t`, linearly interpolated; `None` outside contact.
fn pen_at(trajectory: &[StrokePoint], t: f64) -> Option<StrokePoint> {
    let first = trajectory.first()?;
    let last = trajectory.last()?;
    if t < first.t || t > last.t {
        return None;
    }
    let i = trajectory.partition_point(|p| p.t <= t).saturating_sub(1);
    let a = trajectory[i];
    let Some(&b) = trajectory.get(i + 1) else {
        return Some(a);
    };
    let u = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 0.0 };
    Some(StrokePoint {
        t,
        x: a.x + (b.x - a.x) * u,
        y: a.y + (b.y - a.y) * u,
        pressure: a.pressure + (b.pressure - a.pressure) * u,
    })
}

/// Adds a Gaussian footprint centred at unit-square position `(x, y)`.
pub fn deposit_footprint(field: &mut [f32], rows: usize, cols: usize, x: f64, y: f64, pressure: f64) {
    if pressure <= 0.0 {
        return;
    }
    let cx = x * (cols - 1) as f64;
    let cy = y * (rows - 1) as f64;
    let inv = 1.0 / (2.0 * FOOTPRINT_SIGMA * FOOTPRINT_SIGMA);
    let reach = (4.0 * FOOTPRINT_SIGMA).ceil() as isize;
    let (r0, c0) = (cy.round() as isize, cx.round() as isize);
    for r in (r0 - reach).max(0)..=(r0 + reach).min(rows as isize - 1) {
        for c in (c0 - reach).max(0)..=(c0 + reach).min(cols as isize - 1) {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            let v = &mut field[r as usize * cols + c as usize];
            *v = (*v as f64 + pressure * (-d2 * inv).exp()).min(MAX_PRESSURE_KPA) as f32;
        }
    }
}

/// Rasterizes a trajectory into `SAMPLE_FRAMES` pressure frames.
pub fn render_pressure(trajectory: &[StrokePoint]) -> Frames<f32> {
    let (rows, cols) = (ARRAY_SIDE, ARRAY_SIDE);
    let mut frames = Frames::zeros(SAMPLE_FRAMES, rows, cols);
    for k in 0..SAMPLE_FRAMES {
        if let Some(p) = pen_at(trajectory, k as f64 / FRAME_RATE_HZ as f64) {
            deposit_footprint(frames.frame_mut(k), rows, cols, p.x, p.y, p.pressure);
        }
    }
    frames
}

/// Per-taxel sum over time, max-normalized to [0, 1]. Negative inputs
/// (staircase reconstructions) are clipped to zero first.
pub fn accumulate_pressure_map<T: Copy + Into<f64> + Default>(frames: &Frames<T>) -> Vec<f32> {
    let n = frames.frame_size();
    let mut acc = vec![0.0f64; n];
    for t in 0..frames.len() {
        for (a, &v) in acc.iter_mut().zip(frames.frame(t)) {
            *a += v.into().max(0.0);
        }
    }
    let max = acc.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; n];
    }
    acc.iter().map(|&a| (a / max) as f32).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frames: Frames<f32>,
    pub label: u8,
    pub subject_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub seed: u64,
    pub per_class: usize,
    pub n_styles: usize,
    pub samples: Vec<Sample>,
    pub split: Vec<Split>,
}

impl Dataset {
    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.split[i] == which).collect()
    }
}

/// Stable 64-bit mix of a seed and a stream index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `per_class` samples of each digit 1–9, cycling through `n_styles`
/// writer styles, with a class-stratified seeded 4:1 train/test split.
pub fn build_dataset(per_class: usize, n_styles: usize, seed: u64) -> Result<Dataset> {
    if per_class < 1 || n_styles < 1 {
        return Err(Error::domain("per_class and n_styles must be at least 1"));
    }
    let jobs: Vec<(u8, u32, u64)> = (1..=9u8)
        .flat_map(|digit| (0..per_class).map(move |k| (digit, k)))
        .enumerate()
        .map(|(i, (digit, k))| (digit, (k % n_styles) as u32, derive_seed(seed, i as u64)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(digit, style, rng_seed)| {
            let traj = gen_digit_trajectory(digit, derive_seed(seed ^ 0x5717_e000, style as u64), rng_seed)?;
            Ok(Sample {
                frames: render_pressure(&traj),
                label: digit,
                subject_id: style,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut split = vec![Split::Train; samples.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let n_test = (per_class as f64 / 5.0).round() as usize;
    for class in 0..9 {
        let mut idx: Vec<usize> = (class * per_class..(class + 1) * per_class).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        for &i in idx.iter().take(n_test) {
            split[i] = Split::Test;
        }
    }
    Ok(Dataset {
        seed,
        per_class,
        n_styles,
        samples,
        split,
    })
}

/// Front-end, scan and codec settings used to turn pressure into events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub model: TaxelModel,
    pub front_end: FrontEndConfig,
    pub scan: ScanConfig,
    pub delta: u16,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            model: TaxelModel::default(),
            front_end: dataset_front_end(),
            scan: ScanConfig::default(),
            delta: 6,
        }
    }
}

/// Front-end used for dataset acquisition: the reference readout with a
/// lower feedback gain, so that 0–500 kPa footprints stay below ADC
/// saturation and code excursions carry pressure information.
pub fn dataset_front_end() -> FrontEndConfig {
    FrontEndConfig {
        r_f: 1e3,
        ..FrontEndConfig::default()
    }
}

/// Runs the tracker over every frame; taxels not visited in a frame read 0.
/// Returns the code frames and the total scan count.
pub fn acquire(frames: &Frames<f32>, cfg: &AcquisitionConfig, noise_seed: u64) -> Result<(Frames<u16>, u64)> {
    let (rows, cols) = (frames.rows(), frames.cols());
    let mut xb = Crossbar::with_noise_seed(cfg.model, cfg.front_end, noise_seed)?;
    let mut tracker = Tracker::new(rows, cols, cfg.scan);
    let mut codes = Frames::zeros(0, rows, cols);
    let mut field = PressureField::zeros(rows, cols);
    for t in 0..frames.len() {
        field.values_mut().copy_from_slice(frames.frame(t));
        let acq = tracker.step(&field, &mut xb)?;
        codes.push_frame(&acq.codes)?;
    }
    Ok((codes, tracker.total_scans()))
}

/// Acquires and delta-encodes one sample.
pub fn encode_sample(sample: &Sample, cfg: &AcquisitionConfig, noise_seed: u64) -> Result<EventStream> {
    let (codes, _) = acquire(&sample.frames, cfg, noise_seed)?;
    Ok(delta_encode(&codes, cfg.delta)?.with_label(Some(sample.label)))
}

/// Encodes every sample (in parallel; results do not depend on thread count).
pub fn encode_dataset(ds: &Dataset, cfg: &AcquisitionConfig) -> Result<Vec<EventStream>> {
    ds.samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| encode_sample(s, cfg, derive_seed(ds.seed ^ 0x0015_e000, i as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: u8,
    pub style: u32,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub per_class: usize,
    pub n_styles: usize,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes one `.taer` per sample plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset, streams: &[EventStream]) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(streams.len());
    for (i, (sample, stream)) in ds.samples.iter().zip(streams).enumerate() {
        let file = format!("sample_{i:04}_d{}.taer", sample.label);
        let path = dir.join(&file);
        fs::write(&path, write_aer(stream)).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            file,
            label: sample.label,
            style: sample.subject_id,
            split: ds.split[i],
        });
    }
    let manifest = Manifest {
        seed: ds.seed,
        per_class: ds.per_class,
        n_styles: ds.n_styles,
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the streams a manifest refers to, relative to the manifest's
/// directory.
pub fn load_streams(manifest_path: &Path, manifest: &Manifest) -> Result<Vec<EventStream>> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .samples
        .iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            Ok(read_aer(&bytes)?)
        })
        .collect()
}

//! Reproduction harness: scan-strategy curves, codec aggregates, the
//! three-network comparison table and the Δ sweep.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{compression_stats, delta_decode, EventStream};
use crate::dataset::{accumulate_pressure_map, encode_dataset, AcquisitionConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::grid::Frames;
use crate::scan::{expected_scan_counts, simulate_single_touch, ScanConfig};
use crate::sensor::{Crossbar, FrontEndConfig, TaxelModel};
use crate::snn::train::{evaluate_cnn, evaluate_spiking};
use crate::snn::{
    quantize_params, train_cnn, train_spiking, weight_memory_bytes, Cnn, EpochRecord, LifParams, NetworkKind, Params,
    SpikingNetwork, TrainConfig,
};

/// Scan counts of the three strategies for one array size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanCurvePoint {
    pub n: usize,
    pub frame: usize,
    pub row_column: usize,
    pub binary_worst_formula: usize,
    pub binary_avg_formula: f64,
    pub binary_worst_sim: usize,
    pub binary_avg_sim: f64,
    pub all_localized: bool,
}

/// Closed-form and exhaustively simulated scan counts for each `N`
/// (square arrays with a power-of-two side up to 64).
pub fn scan_benchmark(sizes: &[usize], cfg: &ScanConfig) -> Result<Vec<ScanCurvePoint>> {
    sizes
        .par_iter()
        .map(|&n| {
            let formula = expected_scan_counts(n)?;
            let side = (n as f64).sqrt().round() as usize;
            if side > crate::grid::MAX_LINES {
                return Err(Error::domain(format!("side {side} exceeds {} lines", crate::grid::MAX_LINES)));
            }
            let mut xb = Crossbar::new(TaxelModel::default(), FrontEndConfig::default())?;
            let sim = simulate_single_touch(side, &mut xb, cfg)?;
            Ok(ScanCurvePoint {
                n,
                frame: n,
                row_column: 2 * side,
                binary_worst_formula: formula.worst_scans,
                binary_avg_formula: formula.avg_scans,
                binary_worst_sim: sim.worst,
                binary_avg_sim: sim.mean,
                all_localized: sim.all_localized,
            })
        })
        .collect()
}

pub fn scan_curves_csv(points: &[ScanCurvePoint]) -> String {
    let mut s = String::from(
        "n,frame,row_column,binary_worst_formula,binary_avg_formula,binary_worst_sim,binary_avg_sim\n",
    );
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.n, p.frame, p.row_column, p.binary_worst_formula, p.binary_avg_formula, p.binary_worst_sim, p.binary_avg_sim
        );
    }
    s
}

/// Dataset-level compression aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecSummary {
    pub samples: usize,
    pub adc_bits: u8,
    pub total_events: u64,
    pub mean_events: f64,
    pub mean_sparsity: f64,
    pub min_sparsity: f64,
    pub mean_sample_ratio: f64,
    pub total_raw_bytes: u64,
    pub total_aer_bytes: u64,
    /// `total_raw_bytes / total_aer_bytes`.
    pub compression_ratio: f64,
}

pub fn codec_summary(streams: &[EventStream], adc_bits: u8) -> CodecSummary {
    let stats: Vec<_> = streams.iter().map(|s| compression_stats(s, adc_bits)).collect();
    let n = stats.len().max(1) as f64;
    let total_events: u64 = stats.iter().map(|s| s.event_count as u64).sum();
    let raw: u64 = stats.iter().map(|s| s.raw_bytes as u64).sum();
    let aer: u64 = stats.iter().map(|s| s.aer_bytes as u64).sum();
    CodecSummary {
        samples: stats.len(),
        adc_bits,
        total_events,
        mean_events: total_events as f64 / n,
        mean_sparsity: stats.iter().map(|s| s.sparsity).sum::<f64>() / n,
        min_sparsity: stats.iter().map(|s| s.sparsity).fold(1.0, f64::min),
        mean_sample_ratio: stats.iter().map(|s| s.compression_ratio).sum::<f64>() / n,
        total_raw_bytes: raw,
        total_aer_bytes: aer,
        compression_ratio: if aer == 0 { 0.0 } else { raw as f64 / aer as f64 },
    }
}

/// Network inputs derived from a set of event streams.
#[derive(Debug, Clone)]
pub struct PreparedInputs {
    pub spikes: Vec<Frames<i8>>,
    /// Accumulated maps of the decoded staircase (CNN input).
    pub maps: Vec<Vec<f32>>,
    /// Class indices `0..9` (digit − 1).
    pub labels: Vec<usize>,
}

pub fn prepare_inputs(streams: &[EventStream]) -> Result<PreparedInputs> {
    let rows = streams
        .par_iter()
        .map(|s| {
            let label = s
                .label()
                .ok_or_else(|| Error::domain("stream has no label"))?;
            if !(1..=9).contains(&label) {
                return Err(Error::domain(format!("label {label} outside 1..=9")));
            }
            let map = accumulate_pressure_map(&delta_decode(s)?);
            Ok((s.to_spike_tensor(), map, label as usize - 1))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = PreparedInputs {
        spikes: Vec::with_capacity(rows.len()),
        maps: Vec::with_capacity(rows.len()),
        labels: Vec::with_capacity(rows.len()),
    };
    for (s, m, l) in rows {
        out.spikes.push(s);
        out.maps.push(m);
        out.labels.push(l);
    }
    Ok(out)
}

/// Float parameters of the three compared networks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNetworks {
    pub lif: LifParams,
    pub cnn: Params,
    pub snn: Params,
    pub conv_snn: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub network: NetworkKind,
    pub parameters: u64,
    pub weight_bits: u32,
    pub memory_bytes: u64,
    pub avg_sparsity: f64,
    /// Mean effective kMACs per sample (all time steps).
    pub effective_kmacs: f64,
    /// Mean dense kMACs per sample (all time steps).
    pub dense_kmacs: f64,
    /// Accuracy of the deployed variant (5-bit spiking, float CNN).
    pub accuracy: f64,
    pub float_accuracy: f64,
    pub quantized_accuracy: f64,
}

/// Ratios of the published Table I constants, reproduced as arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PublishedRatios {
    pub memory_ratio: f64,
    pub memory_reduction: f64,
    pub compute_ratio: f64,
    pub sparsity_ratio: f64,
}

pub fn published_ratios() -> PublishedRatios {
    PublishedRatios {
        memory_ratio: 44_650.0 / 285_760.0,
        memory_reduction: 285_760.0 / 44_650.0,
        compute_ratio: 273.60 / 420.85,
        sparsity_ratio: 0.9997 / 0.1315,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub rows: Vec<Table1Row>,
    /// Conv-SNN over CNN weight memory.
    pub memory_ratio: f64,
    /// Conv-SNN over CNN effective MACs.
    pub compute_ratio: f64,
    /// Conv-SNN over CNN average sparsity.
    pub sparsity_ratio: f64,
    pub published: PublishedRatios,
}

impl Table1 {
    pub fn row(&self, kind: NetworkKind) -> Option<&Table1Row> {
        self.rows.iter().find(|r| r.network == kind)
    }
}

pub const DEPLOY_BITS: u8 = 5;

/// Evaluates the three networks on the samples `idx`.
pub fn table1_report(inputs: &PreparedInputs, idx: &[usize], nets: &TrainedNetworks) -> Result<Table1> {
    let labels: Vec<usize> = idx.iter().map(|&i| inputs.labels[i]).collect();
    let spikes: Vec<&Frames<i8>> = idx.iter().map(|&i| &inputs.spikes[i]).collect();
    let maps: Vec<&[f32]> = idx.iter().map(|&i| inputs.maps[i].as_slice()).collect();
    let per_sample = |macs: u64| macs as f64 / idx.len().max(1) as f64 / 1000.0;
    let mut rows = Vec::new();
    for kind in NetworkKind::ALL {
        let spec = kind.default_spec();
        let params_count = spec.parameter_count() as u64;
        let row = match kind {
            NetworkKind::Cnn => {
                let net = Cnn::new(&spec, nets.cnn.clone())?;
                let e = evaluate_cnn(&net, &maps, &labels)?;
                let qp = dequantize(&quantize_params(&nets.cnn, DEPLOY_BITS)?);
                let q = evaluate_cnn(&Cnn::new(&spec, qp)?, &maps, &labels)?;
                Table1Row {
                    network: kind,
                    parameters: params_count,
                    weight_bits: 32,
                    memory_bytes: weight_memory_bytes(params_count, 32),
                    avg_sparsity: e.stats.average_sparsity(),
                    effective_kmacs: per_sample(e.stats.effective_macs()),
                    dense_kmacs: per_sample(e.stats.dense_macs()),
                    accuracy: e.accuracy,
                    float_accuracy: e.accuracy,
                    quantized_accuracy: q.accuracy,
                }
            }
            _ => {
                let params = if kind == NetworkKind::Snn { &nets.snn } else { &nets.conv_snn };
                let float = SpikingNetwork::from_params(&spec, nets.lif, params)?;
                let ef = evaluate_spiking(&float, &spikes, &labels)?;
                let qnet = SpikingNetwork::from_quantized(&spec, nets.lif, &quantize_params(params, DEPLOY_BITS)?)?;
                let eq = evaluate_spiking(&qnet, &spikes, &labels)?;
                Table1Row {
                    network: kind,
                    parameters: params_count,
                    weight_bits: DEPLOY_BITS as u32,
                    memory_bytes: weight_memory_bytes(params_count, DEPLOY_BITS as u32),
                    avg_sparsity: eq.stats.average_sparsity(),
                    effective_kmacs: per_sample(eq.stats.effective_macs()),
                    dense_kmacs: per_sample(eq.stats.dense_macs()),
                    accuracy: eq.accuracy,
                    float_accuracy: ef.accuracy,
                    quantized_accuracy: eq.accuracy,
                }
            }
        };
        rows.push(row);
    }
    let (cnn, conv) = (&rows[0], &rows[2]);
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    Ok(Table1 {
        memory_ratio: ratio(conv.memory_bytes as f64, cnn.memory_bytes as f64),
        compute_ratio: ratio(conv.effective_kmacs, cnn.effective_kmacs),
        sparsity_ratio: ratio(conv.avg_sparsity, cnn.avg_sparsity),
        published: published_ratios(),
        rows,
    })
}

fn dequantize(q: &[crate::snn::QuantizedLayer]) -> Params {
    Params {
        layers: q
            .iter()
            .map(|l| crate::snn::LayerParams {
                weight: l.weight.dequantize(),
                bias: l.bias.dequantize(),
            })
            .collect(),
    }
}

pub fn table1_csv(t: &Table1) -> String {
    let mut s = String::from(
        "network,parameters,weight_bits,memory_bytes,avg_sparsity,effective_kmacs,dense_kmacs,accuracy,float_accuracy,quantized_accuracy\n",
    );
    for r in &t.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.3},{:.3},{:.6},{:.6},{:.6}",
            r.network,
            r.parameters,
            r.weight_bits,
            r.memory_bytes,
            r.avg_sparsity,
            r.effective_kmacs,
            r.dense_kmacs,
            r.accuracy,
            r.float_accuracy,
            r.quantized_accuracy
        );
    }
    s
}

pub type LearningCurves = Vec<(NetworkKind, Vec<EpochRecord>)>;

/// Trains all three networks on the training split with their default
/// configurations (`seed` overrides the training seed).
pub fn train_all(inputs: &PreparedInputs, ds_split: &[Split], seed: u64) -> Result<(TrainedNetworks, LearningCurves)> {
    let train: Vec<usize> = (0..ds_split.len()).filter(|&i| ds_split[i] == Split::Train).collect();
    let test: Vec<usize> = (0..ds_split.len()).filter(|&i| ds_split[i] == Split::Test).collect();
    let mut curves = Vec::new();
    let mut params = Vec::new();
    let mut lif = LifParams::default();
    for kind in NetworkKind::ALL {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::for_kind(kind)
        };
        lif = cfg.lif;
        let spec = kind.default_spec();
        let out = if kind.is_spiking() {
            train_spiking(&spec, &inputs.spikes, &inputs.labels, &train, &test, &cfg)?
        } else {
            train_cnn(&spec, &inputs.maps, &inputs.labels, &train, &test, &cfg)?
        };
        curves.push((kind, out.curve));
        params.push(out.params);
    }
    let [cnn, snn, conv_snn]: [Params; 3] = params
        .try_into()
        .map_err(|_| Error::domain("expected three trained networks"))?;
    Ok((TrainedNetworks { lif, cnn, snn, conv_snn }, curves))
}

/// Sweep settings: acquisition (including noise), Δ values and trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub deltas: Vec<u16>,
    pub acquisition: AcquisitionConfig,
    pub train: TrainConfig,
}

pub const DEFAULT_SWEEP_DELTAS: [u16; 9] = [1, 2, 4, 6, 8, 12, 16, 24, 40];

/// Sensor noise used by the default sweep, V (about 16 ADC codes).
pub const DEFAULT_SWEEP_NOISE: f64 = 0.01;

impl Default for SweepConfig {
    fn default() -> Self {
        let mut acquisition = AcquisitionConfig::default();
        acquisition.front_end.noise_sigma = DEFAULT_SWEEP_NOISE;
        SweepConfig {
            deltas: DEFAULT_SWEEP_DELTAS.to_vec(),
            acquisition,
            train: TrainConfig::for_kind(NetworkKind::ConvSnn),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: u16,
    pub mean_events: f64,
    pub compression_ratio: f64,
    /// 5-bit Conv-SNN test accuracy.
    pub accuracy: f64,
    pub float_accuracy: f64,
}

/// For each Δ: re-encode the dataset, retrain the Conv-SNN from the same
/// seed, and record compression and test accuracy.
pub fn delta_sweep(ds: &Dataset, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.deltas.is_empty() || cfg.deltas.contains(&0) {
        return Err(Error::domain("sweep deltas must be non-empty and ≥ 1"));
    }
    if cfg.deltas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("sweep deltas must be strictly increasing"));
    }
    let train = ds.indices(Split::Train);
    let test = ds.indices(Split::Test);
    let spec = NetworkKind::ConvSnn.default_spec();
    cfg.deltas
        .par_iter()
        .map(|&delta| {
            let acq = AcquisitionConfig { delta, ..cfg.acquisition };
            let streams = encode_dataset(ds, &acq)?;
            let codec = codec_summary(&streams, acq.front_end.adc_bits);
            let inputs = prepare_inputs(&streams)?;
            let out = train_spiking(&spec, &inputs.spikes, &inputs.labels, &train, &test, &cfg.train)?;
            let xs: Vec<&Frames<i8>> = test.iter().map(|&i| &inputs.spikes[i]).collect();
            let ys: Vec<usize> = test.iter().map(|&i| inputs.labels[i]).collect();
            let float = SpikingNetwork::from_params(&spec, cfg.train.lif, &out.params)?;
            let ef = evaluate_spiking(&float, &xs, &ys)?;
            let q = quantize_params(&out.params, DEPLOY_BITS)?;
            let eq = evaluate_spiking(&SpikingNetwork::from_quantized(&spec, cfg.train.lif, &q)?, &xs, &ys)?;
            Ok(SweepRow {
                delta,
                mean_events: codec.mean_events,
                compression_ratio: codec.compression_ratio,
                accuracy: eq.accuracy,
                float_accuracy: ef.accuracy,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("delta,mean_events,compression_ratio,accuracy,float_accuracy\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.3},{:.6},{:.6},{:.6}",
            r.delta, r.mean_events, r.compression_ratio, r.accuracy, r.float_accuracy
        );
    }
    s
}

/// Whether some interior Δ beats both ends strictly.
pub fn has_interior_maximum(rows: &[SweepRow]) -> bool {
    match (rows.first(), rows.last()) {
        (Some(a), Some(b)) if rows.len() >= 3 => rows[1..rows.len() - 1]
            .iter()
            .any(|r| r.accuracy > a.accuracy && r.accuracy > b.accuracy),
        _ => false,
    }
}

pub fn compression_monotone(rows: &[SweepRow]) -> bool {
    rows.windows(2).all(|w| w[1].compression_ratio >= w[0].compression_ratio)
}

/// Everything a `bench` run produced, with its generating configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BenchReport {
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan_curves: Option<Vec<ScanCurvePoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codec_stats: Option<CodecSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table1: Option<Table1>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_sweep: Option<Vec<SweepRow>>,
}

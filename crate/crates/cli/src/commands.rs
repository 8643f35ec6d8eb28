use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eskin_core::bench::{
    codec_summary, delta_sweep, prepare_inputs, scan_benchmark, scan_curves_csv, sweep_csv, table1_csv, table1_report,
    train_all, BenchReport, CodecSummary, PreparedInputs, SweepConfig, SweepRow, Table1, DEFAULT_SWEEP_DELTAS,
    DEFAULT_SWEEP_NOISE,
};
use eskin_core::codec::{compression_stats, delta_encode, write_aer, CompressionStats};
use eskin_core::dataset::{
    acquire, build_dataset, encode_dataset, gen_digit_trajectory, load_streams, read_manifest, render_pressure,
    write_dataset, AcquisitionConfig, Dataset, Manifest, Split, DEFAULT_PER_CLASS, DEFAULT_SEED, DEFAULT_STYLES,
};
use eskin_core::scan::ScanConfig;
use eskin_core::snn::train::learning_curve_csv;
use eskin_core::snn::{
    quantize_params, train_cnn, train_spiking, Checkpoint, CheckpointWeights, EpochRecord, Model, NetworkKind,
    TrainConfig,
};
use eskin_core::snn::train::{evaluate_cnn, evaluate_spiking};
use eskin_core::{EventStream, Frames};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BenchKind, BenchOpts, EncodeOpts, EvalOpts, GenOpts, SplitArg, TrainOpts};
use crate::Usage;

/// Version of every `--json` document (see `docs/schemas/`).
pub const JSON_SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Usage(format!("missing required option --{flag}")).into())
}

fn existing_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

fn writable_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize)]
pub struct GenOutput {
    pub command: &'static str,
    pub schema_version: u32,
    pub manifest: PathBuf,
    pub manifest_sha256: String,
    pub samples: usize,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
    pub delta: u16,
    pub noise: f64,
}

pub fn gen(opts: GenOpts) -> Result<GenOutput> {
    let out = required(opts.out, "out")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let seed = opts.seed.unwrap_or(DEFAULT_SEED);
    let mut acq = AcquisitionConfig {
        delta: opts.delta.unwrap_or(6),
        ..AcquisitionConfig::default()
    };
    acq.front_end.noise_sigma = opts.noise.unwrap_or(0.0);
    let ds = build_dataset(
        opts.per_class.unwrap_or(DEFAULT_PER_CLASS),
        opts.styles.unwrap_or(DEFAULT_STYLES),
        seed,
    )?;
    let streams = encode_dataset(&ds, &acq)?;
    let manifest = write_dataset(&out, &ds, &streams)?;
    let path = out.join(eskin_core::dataset::MANIFEST_FILE);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let test = manifest.samples.iter().filter(|s| s.split == Split::Test).count();
    Ok(GenOutput {
        command: "gen",
        schema_version: JSON_SCHEMA_VERSION,
        manifest: path,
        manifest_sha256: sha256_hex(&bytes),
        samples: manifest.samples.len(),
        train: manifest.samples.len() - test,
        test,
        seed,
        delta: acq.delta,
        noise: acq.front_end.noise_sigma,
    })
}

/// Raw pressure frames accepted by `encode --input`.
#[derive(Debug, Deserialize)]
struct FramesFile {
    rows: usize,
    cols: usize,
    frames: Vec<Vec<f32>>,
}

#[derive(Debug, Serialize)]
pub struct EncodeOutput {
    pub command: &'static str,
    pub schema_version: u32,
    pub output: PathBuf,
    pub stats_path: PathBuf,
    pub frames: usize,
    pub delta: u16,
    pub stats: CompressionStats,
}

pub fn encode(opts: EncodeOpts) -> Result<EncodeOutput> {
    let out = required(opts.out, "out")?;
    let mut acq = AcquisitionConfig {
        delta: opts.delta.unwrap_or(6),
        ..AcquisitionConfig::default()
    };
    acq.front_end.noise_sigma = opts.noise.unwrap_or(0.0);
    let seed = opts.seed.unwrap_or(1);
    let (frames, label) = match (opts.input, opts.digit) {
        (Some(path), None) => {
            existing_file(&path)?;
            writable_parent(&out)?;
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let raw: FramesFile =
                serde_json::from_str(&text).with_context(|| format!("parsing frames in {}", path.display()))?;
            let size = raw.rows * raw.cols;
            let mut data = Vec::with_capacity(raw.frames.len() * size);
            for (t, f) in raw.frames.iter().enumerate() {
                if f.len() != size {
                    bail!("frame {t} has {} values, expected {size}", f.len());
                }
                data.extend_from_slice(f);
            }
            (Frames::from_vec(raw.frames.len(), raw.rows, raw.cols, data)?, None)
        }
        (None, Some(digit)) => {
            if !(1..=9).contains(&digit) {
                return Err(Usage(format!("--digit must be 1–9, got {digit}")).into());
            }
            writable_parent(&out)?;
            let traj = gen_digit_trajectory(digit, opts.style.unwrap_or(0), seed)?;
            (render_pressure(&traj), Some(digit))
        }
        _ => return Err(Usage("give exactly one of --input or --digit".into()).into()),
    };
    let (codes, _) = acquire(&frames, &acq, seed)?;
    let stream = delta_encode(&codes, acq.delta)?.with_label(label);
    let stats = compression_stats(&stream, acq.front_end.adc_bits);
    let stats_path = out.with_extension("json");
    write(&out, write_aer(&stream))?;
    write(&stats_path, serde_json::to_string_pretty(&stats)?)?;
    Ok(EncodeOutput {
        command: "encode",
        schema_version: JSON_SCHEMA_VERSION,
        output: out,
        stats_path,
        frames: frames.len(),
        delta: acq.delta,
        stats,
    })
}

struct LoadedData {
    inputs: PreparedInputs,
    split: Vec<Split>,
}

fn load_manifest(path: &Path) -> Result<(Manifest, Vec<EventStream>)> {
    existing_file(path)?;
    let manifest = read_manifest(path)?;
    let streams = load_streams(path, &manifest)?;
    Ok((manifest, streams))
}

fn load_data(path: &Path) -> Result<LoadedData> {
    let (manifest, streams) = load_manifest(path)?;
    Ok(LoadedData {
        inputs: prepare_inputs(&streams)?,
        split: manifest.samples.iter().map(|s| s.split).collect(),
    })
}

fn indices(split: &[Split], which: SplitArg) -> Vec<usize> {
    (0..split.len())
        .filter(|&i| match which {
            SplitArg::All => true,
            SplitArg::Train => split[i] == Split::Train,
            SplitArg::Test => split[i] == Split::Test,
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub command: &'static str,
    pub schema_version: u32,
    pub network: NetworkKind,
    pub checkpoint: PathBuf,
    pub bits: u8,
    pub split: SplitArg,
    pub samples: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`, classes are digits 1–9.
    pub confusion: Vec<Vec<u32>>,
    pub avg_sparsity: f64,
    pub dense_macs: u64,
    pub effective_macs: u64,
}

fn evaluate(checkpoint: &Checkpoint, data: &LoadedData, idx: &[usize]) -> Result<eskin_core::snn::Evaluation> {
    let labels: Vec<usize> = idx.iter().map(|&i| data.inputs.labels[i]).collect();
    Ok(match checkpoint.model()? {
        Model::Cnn(net) => {
            let maps: Vec<&[f32]> = idx.iter().map(|&i| data.inputs.maps[i].as_slice()).collect();
            evaluate_cnn(&net, &maps, &labels)?
        }
        Model::Spiking(net) => {
            let xs: Vec<&Frames<i8>> = idx.iter().map(|&i| &data.inputs.spikes[i]).collect();
            evaluate_spiking(&net, &xs, &labels)?
        }
    })
}

#[derive(Debug, Serialize)]
pub struct TrainOutput {
    pub command: &'static str,
    pub schema_version: u32,
    pub network: NetworkKind,
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub bits: u8,
    pub train_samples: usize,
    pub test_samples: usize,
    pub config: TrainConfig,
    pub curve: Vec<EpochRecord>,
    /// Test accuracy of the stored checkpoint.
    pub final_test_accuracy: f64,
}

pub fn train(opts: TrainOpts) -> Result<TrainOutput> {
    let manifest = required(opts.manifest, "manifest")?;
    let out = required(opts.out, "out")?;
    let bits = opts.bits.unwrap_or(0);
    if bits != 0 && !(2..=8).contains(&bits) {
        return Err(Usage(format!("--bits must be 0 or 2–8, got {bits}")).into());
    }
    existing_file(&manifest)?;
    writable_parent(&out)?;
    if let Some(curve) = &opts.curve {
        writable_parent(curve)?;
    }
    let kind = opts.network.unwrap_or(NetworkKind::ConvSnn);
    let defaults = TrainConfig::for_kind(kind);
    let cfg = TrainConfig {
        epochs: opts.epochs.unwrap_or(defaults.epochs),
        batch_size: opts.batch_size.unwrap_or(defaults.batch_size),
        learning_rate: opts.learning_rate.unwrap_or(defaults.learning_rate),
        lr_decay: opts.lr_decay.unwrap_or(defaults.lr_decay),
        seed: opts.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let data = load_data(&manifest)?;
    let train_idx = indices(&data.split, SplitArg::Train);
    let test_idx = indices(&data.split, SplitArg::Test);
    let spec = kind.default_spec();
    let outcome = if kind.is_spiking() {
        train_spiking(&spec, &data.inputs.spikes, &data.inputs.labels, &train_idx, &test_idx, &cfg)?
    } else {
        train_cnn(&spec, &data.inputs.maps, &data.inputs.labels, &train_idx, &test_idx, &cfg)?
    };
    let weights = if bits == 0 {
        CheckpointWeights::Float(outcome.params)
    } else {
        CheckpointWeights::Quantized(quantize_params(&outcome.params, bits)?)
    };
    let checkpoint = Checkpoint {
        kind,
        spec,
        lif: cfg.lif,
        weights,
    };
    let bytes = checkpoint.to_bytes()?;
    write(&out, &bytes)?;
    if let Some(curve) = &opts.curve {
        write(curve, learning_curve_csv(&outcome.curve))?;
    }
    let final_test_accuracy = evaluate(&checkpoint, &data, &test_idx)?.accuracy;
    Ok(TrainOutput {
        command: "train",
        schema_version: JSON_SCHEMA_VERSION,
        network: kind,
        checkpoint: out,
        checkpoint_sha256: sha256_hex(&bytes),
        bits,
        train_samples: train_idx.len(),
        test_samples: test_idx.len(),
        config: cfg,
        curve: outcome.curve,
        final_test_accuracy,
    })
}

pub fn eval(opts: EvalOpts) -> Result<EvalOutput> {
    let manifest = required(opts.manifest, "manifest")?;
    let path = required(opts.checkpoint, "checkpoint")?;
    existing_file(&manifest)?;
    existing_file(&path)?;
    let split = opts.split.unwrap_or_default();
    let checkpoint = Checkpoint::load(&path)?;
    let data = load_data(&manifest)?;
    let idx = indices(&data.split, split);
    let e = evaluate(&checkpoint, &data, &idx)?;
    Ok(EvalOutput {
        command: "eval",
        schema_version: JSON_SCHEMA_VERSION,
        network: checkpoint.kind,
        checkpoint: path,
        bits: checkpoint.bits(),
        split,
        samples: e.samples,
        accuracy: e.accuracy,
        confusion: e.confusion,
        avg_sparsity: e.stats.average_sparsity(),
        dense_macs: e.stats.dense_macs(),
        effective_macs: e.stats.effective_macs(),
    })
}

#[derive(Debug, Serialize)]
pub struct BenchOutput {
    pub command: &'static str,
    pub schema_version: u32,
    pub out: PathBuf,
    pub files: Vec<String>,
    pub report: BenchReport,
}

#[derive(Debug, Serialize)]
struct BenchConfig {
    kind: BenchKind,
    dataset_seed: u64,
    per_class: usize,
    n_styles: usize,
    train_seed: u64,
    scan: ScanConfig,
    acquisition: AcquisitionConfig,
    scan_sizes: Vec<usize>,
    sweep: SweepConfig,
}

pub fn bench(opts: BenchOpts) -> Result<BenchOutput> {
    let kind = required(opts.kind, "kind (positional)")?;
    let out = required(opts.out, "out")?;
    if let Some(m) = &opts.manifest {
        existing_file(m)?;
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let stored = match &opts.manifest {
        Some(m) => Some(load_manifest(m)?),
        None => None,
    };
    let (seed, per_class, n_styles) = match &stored {
        Some((m, _)) => (m.seed, m.per_class, m.n_styles),
        None => (
            opts.seed.unwrap_or(DEFAULT_SEED),
            opts.per_class.unwrap_or(DEFAULT_PER_CLASS),
            DEFAULT_STYLES,
        ),
    };
    let train_seed = opts.train_seed.unwrap_or(TrainConfig::default().seed);
    let acquisition = AcquisitionConfig::default();
    let mut sweep = SweepConfig {
        deltas: opts.deltas.unwrap_or_else(|| DEFAULT_SWEEP_DELTAS.to_vec()),
        ..SweepConfig::default()
    };
    sweep.acquisition.front_end.noise_sigma = opts.noise.unwrap_or(DEFAULT_SWEEP_NOISE);
    sweep.train.seed = train_seed;
    if let Some(e) = opts.epochs {
        sweep.train.epochs = e;
    }
    let cfg = BenchConfig {
        kind,
        dataset_seed: seed,
        per_class,
        n_styles,
        train_seed,
        scan: ScanConfig::default(),
        acquisition,
        scan_sizes: opts.sizes.unwrap_or_else(|| vec![16, 64, 256, 1024, 4096]),
        sweep,
    };

    let wants = |k: BenchKind| kind == k || kind == BenchKind::All;
    let mut report = BenchReport {
        config: serde_json::to_value(&cfg)?,
        ..BenchReport::default()
    };
    let mut files = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<()> {
        write(&out.join(name), body)?;
        files.push(name.to_string());
        Ok(())
    };

    if wants(BenchKind::Scan) {
        let pts = scan_benchmark(&cfg.scan_sizes, &cfg.scan)?;
        emit("scan_curves.csv", scan_curves_csv(&pts))?;
        report.scan_curves = Some(pts);
    }
    let mut dataset: Option<Dataset> = None;
    let needs_streams = wants(BenchKind::Codec) || wants(BenchKind::Table1);
    let streams = match stored {
        Some((_, s)) => Some(s),
        None if needs_streams => {
            let ds = build_dataset(per_class, n_styles, seed)?;
            let s = encode_dataset(&ds, &cfg.acquisition)?;
            dataset = Some(ds);
            Some(s)
        }
        None => None,
    };
    if wants(BenchKind::Codec) {
        let streams = streams.as_deref().unwrap_or_default();
        let summary: CodecSummary = codec_summary(streams, cfg.acquisition.front_end.adc_bits);
        emit("codec_stats.json", serde_json::to_string_pretty(&summary)?)?;
        report.codec_stats = Some(summary);
    }
    if wants(BenchKind::Table1) {
        let streams = streams.as_deref().unwrap_or_default();
        let inputs = prepare_inputs(streams)?;
        let split: Vec<Split> = match &opts.manifest {
            Some(m) => read_manifest(m)?.samples.iter().map(|s| s.split).collect(),
            None => dataset.as_ref().map(|d| d.split.clone()).unwrap_or_default(),
        };
        let (nets, curves) = train_all(&inputs, &split, train_seed)?;
        let test: Vec<usize> = (0..split.len()).filter(|&i| split[i] == Split::Test).collect();
        let table: Table1 = table1_report(&inputs, &test, &nets)?;
        emit("table1.csv", table1_csv(&table))?;
        for (k, curve) in &curves {
            emit(&format!("learning_curve_{k}.csv"), learning_curve_csv(curve))?;
        }
        report.table1 = Some(table);
    }
    if wants(BenchKind::Sweep) {
        let ds = match dataset {
            Some(ds) => ds,
            None => build_dataset(per_class, n_styles, seed)?,
        };
        let rows: Vec<SweepRow> = delta_sweep(&ds, &cfg.sweep)?;
        emit("delta_sweep.csv", sweep_csv(&rows))?;
        report.delta_sweep = Some(rows);
    }
    emit("report.json", serde_json::to_string_pretty(&report)?)?;
    Ok(BenchOutput {
        command: "bench",
        schema_version: JSON_SCHEMA_VERSION,
        out,
        files,
        report,
    })
}

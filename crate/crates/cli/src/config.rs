//! Command options and their layering: flags and `ESKIN_*` variables win
//! over the config file, which wins over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use eskin_core::snn::NetworkKind;
use serde::{Deserialize, Serialize};

/// Fills every `None` field of `$a` from `$b`.
macro_rules! layer {
    ($a:ident, $b:ident; $($f:ident),+ $(,)?) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f; } )+
    };
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub gen: GenOpts,
    pub encode: EncodeOpts,
    pub train: TrainOpts,
    pub eval: EvalOpts,
    pub bench: BenchOpts,
    pub serve: ServeOpts,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenOpts {
    /// Samples per digit class [default: 85]
    #[arg(long, env = "ESKIN_PER_CLASS")]
    pub per_class: Option<usize>,
    /// Synthetic writer styles [default: 13]
    #[arg(long, env = "ESKIN_STYLES")]
    pub styles: Option<usize>,
    /// Dataset seed [default: 1]
    #[arg(long, env = "ESKIN_SEED")]
    pub seed: Option<u64>,
    /// Delta-modulation threshold in ADC codes [default: 6]
    #[arg(long, env = "ESKIN_DELTA")]
    pub delta: Option<u16>,
    /// Sensor noise standard deviation in volts [default: 0]
    #[arg(long, env = "ESKIN_NOISE")]
    pub noise: Option<f64>,
    /// Output directory
    #[arg(long, env = "ESKIN_OUT")]
    pub out: Option<PathBuf>,
}

impl GenOpts {
    pub fn layered(mut self, file: GenOpts) -> Self {
        layer!(self, file; per_class, styles, seed, delta, noise, out);
        self
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeOpts {
    /// Pressure frames as JSON `{rows, cols, frames: [[kPa; rows*cols]]}`
    #[arg(long, conflicts_with = "digit")]
    pub input: Option<PathBuf>,
    /// Simulate one synthetic sample of this digit instead of reading frames
    #[arg(long)]
    pub digit: Option<u8>,
    /// Style seed of the simulated sample [default: 0]
    #[arg(long)]
    pub style: Option<u64>,
    /// Per-sample seed of the simulated sample [default: 1]
    #[arg(long, env = "ESKIN_SEED")]
    pub seed: Option<u64>,
    /// Delta-modulation threshold in ADC codes [default: 6]
    #[arg(long, env = "ESKIN_DELTA")]
    pub delta: Option<u16>,
    /// Sensor noise standard deviation in volts [default: 0]
    #[arg(long, env = "ESKIN_NOISE")]
    pub noise: Option<f64>,
    /// Output `.taer` path; statistics go next to it as `.json`
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EncodeOpts {
    pub fn layered(mut self, file: EncodeOpts) -> Self {
        if self.input.is_none() && self.digit.is_none() {
            self.input = file.input;
            self.digit = file.digit;
        }
        layer!(self, file; style, seed, delta, noise, out);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOpts {
    /// Dataset manifest written by `gen`
    #[arg(long, env = "ESKIN_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// cnn, snn or conv_snn [default: conv_snn]
    #[arg(long, env = "ESKIN_NETWORK")]
    pub network: Option<NetworkKind>,
    /// [default: 15 for cnn, 10 otherwise]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam step size [default: 0.002]
    #[arg(long)]
    pub learning_rate: Option<f32>,
    /// Per-epoch learning-rate factor [default: 0.95 for cnn, 0.85 otherwise]
    #[arg(long)]
    pub lr_decay: Option<f32>,
    /// Training seed [default: 7]
    #[arg(long, env = "ESKIN_SEED")]
    pub seed: Option<u64>,
    /// Stored weight precision: 0 keeps f32, otherwise 2–8 bits [default: 0]
    #[arg(long)]
    pub bits: Option<u8>,
    /// Checkpoint path
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Learning-curve CSV path
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

impl TrainOpts {
    pub fn layered(mut self, file: TrainOpts) -> Self {
        layer!(self, file; manifest, network, epochs, batch_size, learning_rate, lr_decay, seed, bits, out, curve);
        self
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOpts {
    /// Dataset manifest written by `gen`
    #[arg(long, env = "ESKIN_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Checkpoint written by `train`
    #[arg(long, env = "ESKIN_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Samples to evaluate [default: test]
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
}

impl EvalOpts {
    pub fn layered(mut self, file: EvalOpts) -> Self {
        layer!(self, file; manifest, checkpoint, split);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchKind {
    Scan,
    Codec,
    Table1,
    Sweep,
    All,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchOpts {
    /// Which report to produce
    #[arg(value_enum)]
    pub kind: Option<BenchKind>,
    /// Dataset manifest; without one the default dataset is generated
    #[arg(long, env = "ESKIN_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Dataset seed when generating [default: 1]
    #[arg(long, env = "ESKIN_SEED")]
    pub seed: Option<u64>,
    /// Training seed [default: 7]
    #[arg(long)]
    pub train_seed: Option<u64>,
    /// Samples per class when generating [default: 85]
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Taxel counts N for the scan curves [default: 16,64,256,1024,4096]
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Δ values for the sweep [default: 1,2,4,6,8,12,16,24,40]
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<u16>>,
    /// Sweep sensor noise in volts [default: 0.01]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Sweep training epochs [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory for CSVs and `report.json`
    #[arg(long, env = "ESKIN_OUT")]
    pub out: Option<PathBuf>,
}

impl BenchOpts {
    pub fn layered(mut self, file: BenchOpts) -> Self {
        layer!(self, file; kind, manifest, seed, train_seed, per_class, sizes, deltas, noise, epochs, out);
        self
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeOpts {
    /// Listen port [default: 8080]
    #[arg(long, env = "ESKIN_PORT")]
    pub port: Option<u16>,
    /// Listen address [default: 127.0.0.1]
    #[arg(long, env = "ESKIN_HOST")]
    pub host: Option<String>,
    /// Spiking checkpoint used for live scores
    #[arg(long, env = "ESKIN_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Advance sessions only on client `tick` messages
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub lockstep: Option<bool>,
    /// Sensor noise standard deviation in volts [default: 0]
    #[arg(long)]
    pub noise: Option<f64>,
}

impl ServeOpts {
    pub fn layered(mut self, file: ServeOpts) -> Self {
        layer!(self, file; port, host, checkpoint, lockstep, noise);
        self
    }
}

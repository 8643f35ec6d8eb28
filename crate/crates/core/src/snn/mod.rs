//! Spiking and conventional classifiers, their training, quantization and
//! cost accounting.

pub mod bptt;
pub mod checkpoint;
pub mod cnn;
pub mod layers;
pub mod lif;
pub mod network;
pub mod params;
pub mod quant;
pub mod stats;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointWeights, Model};
pub use cnn::{Cnn, CnnOutput};
pub use layers::{event_driven_conv, ConvEvent, ConvGeom, Layer, LayerSpec, NetworkSpec, NUM_CLASSES};
pub use lif::{lif_step, lif_update, LifParams, ResetMode};
pub use network::{argmax, quantize_params, QuantizedLayer, SpikingNetwork, SpikingOutput, SpikingState};
pub use params::{Adam, LayerParams, Params};
pub use quant::{quantize_weights, weight_memory_bytes, QuantizedTensor};
pub use stats::{ForwardStats, LayerStats};
pub use train::{train_cnn, train_spiking, EpochRecord, Evaluation, TrainConfig, TrainOutcome};

/// Hidden width of the plain fully connected SNN baseline.
pub const FC_HIDDEN: usize = 268;

/// The three compared network families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Cnn,
    Snn,
    ConvSnn,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 3] = [NetworkKind::Cnn, NetworkKind::Snn, NetworkKind::ConvSnn];

    pub fn default_spec(self) -> NetworkSpec {
        match self {
            NetworkKind::Cnn | NetworkKind::ConvSnn => NetworkSpec::conv_default(),
            NetworkKind::Snn => NetworkSpec::fc_default(FC_HIDDEN),
        }
    }

    pub fn is_spiking(self) -> bool {
        !matches!(self, NetworkKind::Cnn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::Cnn => "cnn",
            NetworkKind::Snn => "snn",
            NetworkKind::ConvSnn => "conv_snn",
        }
    }
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NetworkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "cnn" => Ok(NetworkKind::Cnn),
            "snn" => Ok(NetworkKind::Snn),
            "conv_snn" | "convsnn" => Ok(NetworkKind::ConvSnn),
            other => Err(format!("unknown network kind `{other}` (expected cnn, snn or conv_snn)")),
        }
    }
}

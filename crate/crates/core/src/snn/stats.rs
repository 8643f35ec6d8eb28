use serde::{Deserialize, Serialize};

/// Counters for one layer over a forward pass (summed over time steps).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStats {
    /// MACs a dense evaluation would perform.
    pub dense_macs: u64,
    /// MACs actually performed with zero-skipping.
    pub effective_macs: u64,
    pub input_nonzero: u64,
    pub input_total: u64,
    /// Spikes (or nonzero activations) produced.
    pub output_active: u64,
}

impl LayerStats {
    /// Fraction of the dense MACs whose input operand was nonzero.
    pub fn density(&self) -> f64 {
        if self.dense_macs == 0 {
            0.0
        } else {
            self.effective_macs as f64 / self.dense_macs as f64
        }
    }

    pub fn input_nonzero_fraction(&self) -> f64 {
        if self.input_total == 0 {
            0.0
        } else {
            self.input_nonzero as f64 / self.input_total as f64
        }
    }
}

/// Per-layer MAC and activity accounting of a forward pass.
///
/// `effective_macs() = Σ dense_macs·density` holds exactly because density
/// is defined from the instrumented counter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForwardStats {
    pub layers: Vec<LayerStats>,
    pub time_steps: usize,
}

impl ForwardStats {
    pub fn new(n_layers: usize) -> Self {
        ForwardStats {
            layers: vec![LayerStats::default(); n_layers],
            time_steps: 0,
        }
    }

    pub fn dense_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.dense_macs).sum()
    }

    pub fn effective_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.effective_macs).sum()
    }

    /// One minus the MAC-weighted mean input density.
    pub fn average_sparsity(&self) -> f64 {
        let dense = self.dense_macs();
        if dense == 0 {
            return 1.0;
        }
        1.0 - self.effective_macs() as f64 / dense as f64
    }

    pub fn spike_counts(&self) -> Vec<u64> {
        self.layers.iter().map(|l| l.output_active).collect()
    }

    /// Adds another pass's counters (for dataset-level aggregates).
    pub fn absorb(&mut self, other: &ForwardStats) {
        if self.layers.len() < other.layers.len() {
            self.layers.resize(other.layers.len(), LayerStats::default());
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.dense_macs += b.dense_macs;
            a.effective_macs += b.effective_macs;
            a.input_nonzero += b.input_nonzero;
            a.input_total += b.input_total;
            a.output_active += b.output_active;
        }
        self.time_steps += other.time_steps;
    }
}

//! Discrete-time leaky integrate-and-fire dynamics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    /// `V ← V − θ` after a spike.
    Subtract,
    /// `V ← 0` after a spike.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub decay: f32,
    pub threshold: f32,
    pub reset: ResetMode,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            decay: 0.9,
            threshold: 1.0,
            reset: ResetMode::Subtract,
        }
    }
}

impl LifParams {
    pub fn is_valid(&self) -> bool {
        self.decay > 0.0 && self.decay <= 1.0 && self.threshold > 0.0
    }
}

/// Updates membranes in place: `U = λ·V + I`, spike where `U ≥ θ`, then
/// reset. Writes 0/1 into `spikes` and returns how many fired.
pub fn lif_update(v: &mut [f32], current: &[f32], params: &LifParams, spikes: &mut [u8]) -> usize {
    debug_assert_eq!(v.len(), current.len());
    debug_assert_eq!(v.len(), spikes.len());
    let mut fired = 0;
    for ((v, &i), s) in v.iter_mut().zip(current).zip(spikes.iter_mut()) {
        let u = params.decay * *v + i;
        if u >= params.threshold {
            *s = 1;
            fired += 1;
            *v = match params.reset {
                ResetMode::Subtract => u - params.threshold,
                ResetMode::Zero => 0.0,
            };
        } else {
            *s = 0;
            *v = u;
        }
    }
    fired
}

/// One LIF step on fresh buffers.
pub fn lif_step(v: &[f32], current: &[f32], params: &LifParams) -> (Vec<f32>, Vec<u8>) {
    assert_eq!(v.len(), current.len(), "membrane and current shapes differ");
    let mut next = v.to_vec();
    let mut spikes = vec![0; v.len()];
    lif_update(&mut next, current, params, &mut spikes);
    (next, spikes)
}

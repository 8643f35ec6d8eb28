//! Shared fixtures for the criterion benches.

use eskin_core::codec::{delta_encode, EventStream};
use eskin_core::dataset::{acquire, gen_digit_trajectory, render_pressure, AcquisitionConfig};
use eskin_core::grid::Frames;
use eskin_core::snn::{NetworkKind, Params, SpikingNetwork};

/// Event stream of one synthetic digit at the default Δ.
pub fn digit_stream(digit: u8) -> EventStream {
    let traj = gen_digit_trajectory(digit, 3, 11).expect("valid digit");
    let frames = render_pressure(&traj);
    let cfg = AcquisitionConfig::default();
    let (codes, _) = acquire(&frames, &cfg, 0).expect("acquisition");
    delta_encode(&codes, cfg.delta).expect("encoding").with_label(Some(digit))
}

/// Randomly initialized network of the given kind (weights are irrelevant
/// for timing, only spike sparsity matters).
pub fn spiking_network(kind: NetworkKind, seed: u64) -> SpikingNetwork {
    let spec = kind.default_spec();
    let layers = spec.resolve().expect("default spec resolves");
    let gains = vec![2.0; layers.len()];
    let params = Params::init(&layers, &gains, seed);
    SpikingNetwork::from_params(&spec, Default::default(), &params).expect("shapes match")
}

pub fn spikes(stream: &EventStream) -> Frames<i8> {
    stream.to_spike_tensor()
}

mod common;

use common::fixtures::{random_quantized, readout_gradient_check, small_specs, ternary_grid};
use eskin_core::grid::Frames;
use eskin_core::snn::{
    event_driven_conv, lif_step, quantize_params, weight_memory_bytes, Checkpoint, CheckpointWeights, ConvEvent,
    ConvGeom, LayerSpec, LifParams, Model, NetworkKind, NetworkSpec, Params, QuantizedTensor,
    ResetMode, SpikingNetwork, TrainConfig,
};
use eskin_core::snn::train::evaluate_spiking;
use eskin_core::snn::train_spiking;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn event_driven_conv_equals_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..1000 {
        let c = rng.random_range(1..=3);
        let h = rng.random_range(3..=16);
        let w = rng.random_range(3..=16);
        let out_ch = rng.random_range(1..=4);
        let k = *[1usize, 3, 5].iter().rev().find(|&&k| k <= h.min(w)).unwrap();
        let k = rng.random_range(0..=k / 2) * 2 + 1;
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=k / 2);
        let geom = ConvGeom::new(c, h, w, out_ch, k, stride, pad).unwrap();
        let density = rng.random_range(0.0..0.3);
        let grid = ternary_grid(&mut rng, c * h * w, density);
        let kernel: Vec<i32> = (0..out_ch * c * k * k).map(|_| rng.random_range(-16..16)).collect();

        let events: Vec<ConvEvent> = grid
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, &v)| ConvEvent { channel: i / (h * w), row: i / w % h, col: i % w, value: v as i32 })
            .collect();
        let mut acc = vec![0i32; geom.out_ch * geom.out_h * geom.out_w];
        let macs = event_driven_conv(&events, &kernel, &geom, &mut acc);

        let input: Vec<i64> = grid.iter().map(|&v| v as i64).collect();
        let weights: Vec<i64> = kernel.iter().map(|&v| v as i64).collect();
        let (want, want_macs, shape) = common::conv_oracle(&input, (c, h, w), &weights, out_ch, k, stride, pad);
        assert_eq!(shape, (geom.out_ch, geom.out_h, geom.out_w), "trial {trial}");
        assert_eq!(acc.iter().map(|&v| v as i64).collect::<Vec<_>>(), want, "trial {trial}");
        assert_eq!(macs, want_macs, "trial {trial}");
    }
}

#[test]
fn interior_spike_costs_kernel_area_times_channels() {
    let geom = ConvGeom::new(1, 16, 16, 8, 3, 1, 1).unwrap();
    let kernel = vec![1i32; 8 * 9];
    let mut acc = vec![0i32; 8 * 256];
    let ev = ConvEvent { channel: 0, row: 7, col: 7, value: 1 };
    assert_eq!(event_driven_conv(&[ev], &kernel, &geom, &mut acc), 72);
    assert_eq!(event_driven_conv(&[], &kernel, &geom, &mut acc), 0);
}

#[test]
fn integer_forward_and_mac_counter_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut total_output_spikes = 0;
    for spec in small_specs() {
        for reset in [ResetMode::Subtract, ResetMode::Zero] {
            for _ in 0..25 {
                let q = random_quantized(&spec, &mut rng);
                let lif = LifParams { reset, ..LifParams::default() };
                let net = SpikingNetwork::from_quantized(&spec, lif, &q).unwrap();
                let (c, h, w) = spec.input;
                let steps = rng.random_range(1..=30);
                let frames: Vec<Vec<i8>> = (0..steps).map(|_| ternary_grid(&mut rng, c * h * w, 0.2)).collect();
                let input = Frames::from_vec(steps, h, c * w, frames.concat()).unwrap();

                let out = net.forward(&input).unwrap();
                let (counts, macs) = common::spiking_oracle(&spec, &q, lif.decay, lif.threshold, reset, &frames);
                let scores: Vec<f32> = counts.iter().map(|&c| c as f32).collect();
                assert_eq!(out.scores, scores);
                let measured: Vec<u64> = out.stats.layers.iter().map(|l| l.effective_macs).collect();
                assert_eq!(measured, macs);

                let dense: Vec<u64> = spec.dense_macs().iter().map(|m| m * steps as u64).collect();
                let per_layer_dense: Vec<u64> = out.stats.layers.iter().map(|l| l.dense_macs).collect();
                assert_eq!(per_layer_dense, dense);
                let weighted: f64 = out.stats.layers.iter().map(|l| l.dense_macs as f64 * l.density()).sum();
                assert!((weighted - out.stats.effective_macs() as f64).abs() < 1e-6);

                assert_eq!(net.forward_dense(&input).unwrap().scores, out.scores);
                total_output_spikes += counts.iter().sum::<u32>();
            }
        }
    }
    assert!(total_output_spikes > 0, "random networks never fired");
}

#[test]
fn zero_input_costs_nothing() {
    let spec = NetworkSpec::conv_default();
    let q = quantize_params(&Params::init(&spec.resolve().unwrap(), &[2.0, 2.0, 3.0], 3), 5).unwrap();
    let net = SpikingNetwork::from_quantized(&spec, LifParams::default(), &q).unwrap();
    let out = net.forward(&Frames::zeros(240, 16, 16)).unwrap();
    assert!(out.scores.iter().all(|&s| s == 0.0));
    assert_eq!(out.stats.effective_macs(), 0);
}

#[test]
fn lif_hand_traces() {
    let p = LifParams::default();
    let (v, s) = lif_step(&[0.5], &[0.6], &p);
    assert_eq!(s, [1]);
    assert!((v[0] - 0.05).abs() < 1e-6);
    let (v, s) = lif_step(&[0.2], &[-0.5], &p);
    assert_eq!(s, [0]);
    assert!((v[0] + 0.32).abs() < 1e-6);

    let integrator = LifParams { decay: 1.0, threshold: f32::INFINITY, reset: ResetMode::Subtract };
    let currents = [0.25f32, -1.5, 3.0, 0.125, 2.0];
    let mut v = vec![0.0];
    for i in currents {
        let (next, s) = lif_step(&v, &[i], &integrator);
        assert_eq!(s, [0]);
        v = next;
    }
    assert_eq!(v[0], currents.iter().sum::<f32>());
}

proptest! {
    #[test]
    fn quantization_error_within_half_step(
        w in proptest::collection::vec(-4.0f32..4.0, 1..200),
        bits in 2u8..=8,
    ) {
        let q = eskin_core::snn::quantize_weights(&w, bits).unwrap();
        let (lo, hi) = QuantizedTensor::code_range(bits);
        for (&x, (&c, d)) in w.iter().zip(q.codes.iter().zip(q.dequantize())) {
            prop_assert!((lo..=hi).contains(&(c as i32)));
            prop_assert!((d - x).abs() <= q.scale / 2.0 + 1e-6 * q.scale.max(1.0));
        }
    }
}

#[test]
fn quantization_examples() {
    let q = eskin_core::snn::quantize_weights(&[1.0, 0.5, -1.0], 5).unwrap();
    assert!((q.scale - 1.0 / 15.0).abs() < 1e-9);
    assert_eq!(q.codes, [15, 8, -15]);
    let zero = eskin_core::snn::quantize_weights(&[0.0; 4], 5).unwrap();
    assert_eq!((zero.scale, zero.codes), (0.0, vec![0; 4]));
}

#[test]
fn weight_memory_matches_published_table() {
    assert_eq!(weight_memory_bytes(71_440, 5), 44_650);
    assert_eq!(weight_memory_bytes(71_440, 32), 285_760);
    assert_eq!(weight_memory_bytes(0, 5), 0);
    assert_eq!(NetworkSpec::conv_default().parameter_count(), 71_399);
    let snn = NetworkKind::Snn.default_spec().parameter_count();
    assert_eq!(snn, 256 * 268 + 268 + 268 * 9 + 9);
    assert!((snn as f64 - 71_440.0).abs() / 71_440.0 < 0.02);
    assert_eq!(NetworkSpec::conv_default().dense_macs().iter().sum::<u64>(), 640_512);
}

#[test]
fn readout_gradients_match_finite_differences() {
    for seed in [21, 22, 23] {
        let g = readout_gradient_check(seed);
        assert_eq!(g.output_spikes, 0);
        assert_eq!(g.checked, 18);
        assert!(g.loss_gap < 1e-5, "loss gap {}", g.loss_gap);
        assert!(g.max_abs_grad > 1e-3);
        assert!(g.max_rel_error < 1e-4, "seed {seed}: relative error {}", g.max_rel_error);
    }
}

/// Two 4×4 inputs, each a single pixel spiking every other step.
fn two_sample_set() -> (NetworkSpec, Vec<Frames<i8>>, Vec<usize>) {
    let spec = NetworkSpec {
        input: (1, 4, 4),
        layers: vec![LayerSpec::Fc { inputs: 16, outputs: 10 }, LayerSpec::Fc { inputs: 10, outputs: 2 }],
    };
    let inputs = [3usize, 12]
        .iter()
        .map(|&px| {
            let mut f = Frames::zeros(40, 4, 4);
            for t in (0..40).step_by(2) {
                f.frame_mut(t)[px] = 1;
            }
            f
        })
        .collect();
    (spec, inputs, vec![0, 1])
}

fn small_config() -> TrainConfig {
    TrainConfig { epochs: 40, batch_size: 2, learning_rate: 2e-2, lr_decay: 1.0, seed: 3, ..TrainConfig::default() }
}

#[test]
fn two_samples_are_memorized() {
    let (spec, inputs, labels) = two_sample_set();
    let out = train_spiking(&spec, &inputs, &labels, &[0, 1], &[], &small_config()).unwrap();
    assert_eq!(out.curve.last().unwrap().train_accuracy, 1.0);
}

#[test]
fn training_is_deterministic() {
    let (spec, inputs, labels) = two_sample_set();
    let cfg = TrainConfig { epochs: 5, ..small_config() };
    let a = train_spiking(&spec, &inputs, &labels, &[0, 1], &[0], &cfg).unwrap();
    let b = train_spiking(&spec, &inputs, &labels, &[0, 1], &[0], &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.curve, b.curve);
}

#[test]
fn checkpoint_reload_reproduces_evaluation() {
    let (spec, inputs, labels) = two_sample_set();
    let out = train_spiking(&spec, &inputs, &labels, &[0, 1], &[], &small_config()).unwrap();
    let q = quantize_params(&out.params, 5).unwrap();
    let net = SpikingNetwork::from_quantized(&spec, LifParams::default(), &q).unwrap();
    let refs: Vec<&Frames<i8>> = inputs.iter().collect();
    let before = evaluate_spiking(&net, &refs, &labels).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.eskw");
    let ckpt = Checkpoint {
        kind: NetworkKind::Snn,
        spec: spec.clone(),
        lif: LifParams::default(),
        weights: CheckpointWeights::Quantized(q),
    };
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let Model::Spiking(net2) = loaded.model().unwrap() else { panic!("spiking checkpoint") };
    let after = evaluate_spiking(&net2, &refs, &labels).unwrap();
    assert_eq!(before, after);
}

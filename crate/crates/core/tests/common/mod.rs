//! Independent reference implementations used as test oracles. None of
//! these call into the crate's layer kernels.

#![allow(dead_code)]

use eskin_core::snn::{LayerSpec, NetworkSpec, QuantizedLayer, ResetMode};

/// Output-centric dense convolution over `[c][h][w]` input with weights
/// `[out][in][k][k]`. Returns `(accumulators, multiplications with a
/// nonzero input operand)`.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    input: &[i64],
    (c, h, w): (usize, usize, usize),
    weights: &[i64],
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<i64>, u64, (usize, usize, usize)) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0i64; out_ch * oh * ow];
    let mut macs = 0u64;
    for co in 0..out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0i64;
                for ci in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let x = input[(ci * h + iy as usize) * w + ix as usize];
                            if x != 0 {
                                macs += 1;
                            }
                            sum += weights[((co * c + ci) * k + ky) * k + kx] * x;
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = sum;
            }
        }
    }
    (out, macs, (out_ch, oh, ow))
}

/// Dense matrix-vector product `W·x` with `W` row-major `[outputs][inputs]`.
pub fn fc_oracle(input: &[i64], weights: &[i64], outputs: usize) -> (Vec<i64>, u64) {
    let inputs = input.len();
    let mut macs = 0u64;
    let out = (0..outputs)
        .map(|o| {
            let mut sum = 0i64;
            for i in 0..inputs {
                if input[i] != 0 {
                    macs += 1;
                }
                sum += weights[o * inputs + i] * input[i];
            }
            sum
        })
        .collect();
    (out, macs)
}

/// Integer spiking network evaluated layer by layer with dense loops.
/// Returns output spike counts and per-layer multiplications with nonzero
/// operands (summed over time).
pub fn spiking_oracle(
    spec: &NetworkSpec,
    q: &[QuantizedLayer],
    decay: f32,
    threshold: f32,
    reset: ResetMode,
    frames: &[Vec<i8>],
) -> (Vec<u32>, Vec<u64>) {
    let n = spec.layers.len();
    let mut membranes: Vec<Vec<f32>> = Vec::new();
    let mut macs = vec![0u64; n];
    let mut counts = Vec::new();
    for frame in frames {
        let mut x: Vec<i64> = frame.iter().map(|&v| v as i64).collect();
        let mut shape = spec.input;
        for (l, layer) in spec.layers.iter().enumerate() {
            let w: Vec<i64> = q[l].weight.codes.iter().map(|&c| c as i64).collect();
            let b: Vec<i64> = q[l].bias.codes.iter().map(|&c| c as i64).collect();
            let (acc, m, per_channel) = match *layer {
                LayerSpec::Conv { out_channels, kernel, stride, padding, .. } => {
                    let (acc, m, s) = conv_oracle(&x, shape, &w, out_channels, kernel, stride, padding);
                    shape = s;
                    (acc, m, s.1 * s.2)
                }
                LayerSpec::Fc { outputs, .. } => {
                    let (acc, m) = fc_oracle(&x, &w, outputs);
                    (acc, m, 1)
                }
            };
            macs[l] += m;
            if membranes.len() <= l {
                membranes.push(vec![0.0; acc.len()]);
                if l == n - 1 {
                    counts = vec![0u32; acc.len()];
                }
            }
            let scale = q[l].weight.scale;
            let mut spikes = vec![0i64; acc.len()];
            for j in 0..acc.len() {
                let current = (acc[j] + b[j / per_channel]) as i32 as f32 * scale;
                let u = decay * membranes[l][j] + current;
                if u >= threshold {
                    spikes[j] = 1;
                    membranes[l][j] = match reset {
                        ResetMode::Subtract => u - threshold,
                        ResetMode::Zero => 0.0,
                    };
                    if l == n - 1 {
                        counts[j] += 1;
                    }
                } else {
                    membranes[l][j] = u;
                }
            }
            x = spikes;
        }
    }
    (counts, macs)
}

/// Reference delta modulator written from the definition: a per-pixel
/// reference moves by ±Δ whenever the code leaves the band `(ref−Δ, ref+Δ)`.
pub fn delta_oracle(frames: &[Vec<i64>], delta: i64) -> Vec<(usize, usize, i8)> {
    let mut events = Vec::new();
    let Some(first) = frames.first() else { return events };
    let mut reference = first.clone();
    for (t, frame) in frames.iter().enumerate().skip(1) {
        for (a, &v) in frame.iter().enumerate() {
            if v >= reference[a] + delta {
                reference[a] += delta;
                events.push((t, a, 1));
            } else if v <= reference[a] - delta {
                reference[a] -= delta;
                events.push((t, a, -1));
            }
        }
    }
    events
}

pub mod fixtures {
    //! Random inputs, networks and touch scripts shared by several tests.

    use std::sync::Arc;

    use eskin_core::grid::Frames;
    use eskin_core::live::{ClientMessage, Script, ServerMessage, Session, SessionConfig, Touch};
    use eskin_core::snn::bptt::{loss_and_grad, BpttConfig, Workspace};
    use eskin_core::snn::{
        quantize_params, LayerSpec, LifParams, NetworkSpec, Params, QuantizedLayer, QuantizedTensor, SpikingNetwork,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn ternary_grid(rng: &mut impl Rng, len: usize, p_active: f64) -> Vec<i8> {
        (0..len)
            .map(|_| {
                if rng.random_bool(p_active) {
                    if rng.random_bool(0.5) { 1 } else { -1 }
                } else {
                    0
                }
            })
            .collect()
    }

    /// 5-bit codes with a scale that makes every layer fire now and then.
    pub fn random_quantized(spec: &NetworkSpec, rng: &mut impl Rng) -> Vec<QuantizedLayer> {
        let layers = spec.resolve().unwrap();
        layers
            .iter()
            .map(|l| {
                let fan_in = (l.weight_len() / l.bias_len()) as f32;
                let tensor = |n: usize, lo: i8, hi: i8, rng: &mut dyn rand::RngCore| QuantizedTensor {
                    bits: 5,
                    scale: 2.5 / fan_in.sqrt(),
                    codes: (0..n).map(|_| rng.random_range(lo..=hi)).collect(),
                };
                QuantizedLayer { weight: tensor(l.weight_len(), -16, 15, rng), bias: tensor(l.bias_len(), -4, 2, rng) }
            })
            .collect()
    }

    /// Networks with inputs of at most 8×8.
    pub fn small_specs() -> Vec<NetworkSpec> {
        vec![
            NetworkSpec {
                input: (1, 8, 8),
                layers: vec![
                    LayerSpec::Conv { in_channels: 1, out_channels: 3, kernel: 3, stride: 1, padding: 1 },
                    LayerSpec::Conv { in_channels: 3, out_channels: 4, kernel: 3, stride: 2, padding: 1 },
                    LayerSpec::Fc { inputs: 4 * 4 * 4, outputs: 5 },
                ],
            },
            NetworkSpec {
                input: (1, 6, 7),
                layers: vec![
                    LayerSpec::Conv { in_channels: 1, out_channels: 2, kernel: 3, stride: 1, padding: 0 },
                    LayerSpec::Fc { inputs: 2 * 4 * 5, outputs: 6 },
                    LayerSpec::Fc { inputs: 6, outputs: 3 },
                ],
            },
            NetworkSpec {
                input: (1, 4, 4),
                layers: vec![LayerSpec::Fc { inputs: 16, outputs: 12 }, LayerSpec::Fc { inputs: 12, outputs: 4 }],
            },
        ]
    }

    /// Default Conv-SNN topology with random 5-bit weights.
    pub fn conv_network(seed: u64) -> SpikingNetwork {
        let spec = NetworkSpec::conv_default();
        let params = Params::init(&spec.resolve().unwrap(), &[2.0, 2.0, 3.0], seed);
        SpikingNetwork::from_quantized(&spec, LifParams::default(), &quantize_params(&params, 5).unwrap()).unwrap()
    }

    /// f64 reference of the toy network's readout loss. Hidden spikes come
    /// from the first-layer weights; the readout must stay below threshold.
    fn toy_loss(w1: &[f64], w2: &[f64], b2: &[f64], input: &[Vec<i8>], label: usize, membrane_scale: f64) -> f64 {
        let (n_in, n_hid, n_out) = (input[0].len(), w1.len() / input[0].len(), b2.len());
        let (decay, theta) = (0.9f64, 1.0f64);
        let mut v1 = vec![0.0; n_hid];
        let mut v2 = vec![0.0; n_out];
        let mut u_sum = vec![0.0; n_out];
        for frame in input {
            let mut spikes = vec![0.0; n_hid];
            for j in 0..n_hid {
                let i: f64 = (0..n_in).map(|k| w1[j * n_in + k] * frame[k] as f64).sum();
                let u = decay * v1[j] + i;
                if u >= theta {
                    spikes[j] = 1.0;
                    v1[j] = u - theta;
                } else {
                    v1[j] = u;
                }
            }
            for o in 0..n_out {
                let i: f64 = (0..n_hid).map(|j| w2[o * n_hid + j] * spikes[j]).sum::<f64>() + b2[o];
                let u = decay * v2[o] + i;
                assert!(u < theta, "readout left its linear regime");
                v2[o] = u;
                u_sum[o] += u;
            }
        }
        let logits: Vec<f64> = u_sum.iter().map(|u| membrane_scale * u / input.len() as f64).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        lse - logits[label]
    }

    /// Result of comparing BPTT readout gradients with central differences.
    pub struct GradientCheck {
        pub checked: usize,
        pub max_rel_error: f64,
        pub loss_gap: f64,
        pub max_abs_grad: f32,
        pub output_spikes: u32,
    }

    /// 6 → 5 → 3 fully connected toy over 12 steps: hidden weights are
    /// multiples of 1/8 so spikes are identical in f32 and f64, the readout
    /// stays subthreshold and the loss is the membrane term only.
    pub fn readout_gradient_check(seed: u64) -> GradientCheck {
        let (n_in, n_hid, n_out, steps) = (6, 5, 3, 12);
        let spec = NetworkSpec {
            input: (1, 1, n_in),
            layers: vec![
                LayerSpec::Fc { inputs: n_in, outputs: n_hid },
                LayerSpec::Fc { inputs: n_hid, outputs: n_out },
            ],
        };
        let layers = spec.resolve().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eighths = |rng: &mut ChaCha8Rng, lo: i32, hi: i32| rng.random_range(lo..=hi) as f32 / 8.0;
        let mut params = Params::zeros(&layers);
        params.layers[0].weight = (0..n_in * n_hid).map(|_| eighths(&mut rng, -12, 16)).collect();
        params.layers[1].weight = (0..n_hid * n_out).map(|_| eighths(&mut rng, -2, 1) / 4.0).collect();
        params.layers[1].bias = (0..n_out).map(|_| eighths(&mut rng, -1, 1) / 8.0).collect();
        let frames: Vec<Vec<i8>> = (0..steps).map(|_| ternary_grid(&mut rng, n_in, 0.5)).collect();
        let input = Frames::from_vec(steps, 1, n_in, frames.concat()).unwrap();

        let cfg = BpttConfig { count_scale: 0.0, membrane_scale: 4.0 };
        let label = 1;
        let mut grad = Params::zeros(&layers);
        let r = loss_and_grad(&layers, &params, &LifParams::default(), &cfg, &input, label, &mut grad, &mut Workspace::default());

        let f64s = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let (w1, w2, b2) = (f64s(&params.layers[0].weight), f64s(&params.layers[1].weight), f64s(&params.layers[1].bias));
        let loss = |w2: &[f64], b2: &[f64]| toy_loss(&w1, w2, b2, &frames, label, cfg.membrane_scale as f64);

        let h = 1e-4;
        let mut out = GradientCheck {
            checked: 0,
            max_rel_error: 0.0,
            loss_gap: (loss(&w2, &b2) - r.loss as f64).abs(),
            max_abs_grad: grad.layers[1].weight.iter().fold(0.0f32, |m, g| m.max(g.abs())),
            output_spikes: r.counts.iter().sum(),
        };
        let mut record = |analytic: f32, numeric: f64| {
            let denom = numeric.abs().max(analytic.abs() as f64).max(1e-3);
            out.max_rel_error = out.max_rel_error.max((analytic as f64 - numeric).abs() / denom);
            out.checked += 1;
        };
        for i in 0..w2.len() {
            let (mut up, mut dn) = (w2.clone(), w2.clone());
            up[i] += h;
            dn[i] -= h;
            record(grad.layers[1].weight[i], (loss(&up, &b2) - loss(&dn, &b2)) / (2.0 * h));
        }
        for i in 0..b2.len() {
            let (mut up, mut dn) = (b2.clone(), b2.clone());
            up[i] += h;
            dn[i] -= h;
            record(grad.layers[1].bias[i], (loss(&w2, &up) - loss(&w2, &dn)) / (2.0 * h));
        }
        out
    }

    /// A few strokes with pauses; some frames carry a second finger.
    pub fn random_script(rng: &mut ChaCha8Rng) -> Script {
        let len = rng.random_range(30..=200);
        let mut script = vec![Vec::new(); len];
        let mut t = rng.random_range(0..10);
        while t < len {
            let stroke = rng.random_range(5..40).min(len - t);
            let (mut x, mut y) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
            let (dx, dy) = (rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
            let pressure = rng.random_range(80.0..450.0);
            for frame in &mut script[t..t + stroke] {
                x = f64::clamp(x + dx, 0.0, 1.0);
                y = f64::clamp(y + dy, 0.0, 1.0);
                frame.push(Touch { t: 0, x, y, pressure });
                if rng.random_bool(0.1) {
                    frame.push(Touch { t: 0, x: 1.0 - x, y, pressure: pressure / 2.0 });
                }
            }
            t += stroke + rng.random_range(0..30);
        }
        for (t, frame) in script.iter_mut().enumerate() {
            frame.iter_mut().for_each(|touch| touch.t = t as u64);
        }
        script
    }

    /// Drives a lockstep session through `script`. With `upfront`, every
    /// touch is queued before the first tick; otherwise touches arrive
    /// frame by frame.
    pub fn run_online(
        script: &Script,
        cfg: SessionConfig,
        model: Option<Arc<SpikingNetwork>>,
        upfront: bool,
    ) -> Vec<ServerMessage> {
        let mut session = Session::new(1, cfg, model).unwrap();
        let mut out = Vec::new();
        if upfront {
            for touch in script.iter().flatten() {
                out.extend(session.handle(ClientMessage::Touch(*touch), true));
            }
            out.extend(session.handle(ClientMessage::Tick { count: Some(script.len() as u32) }, true));
        } else {
            for frame in script {
                for touch in frame {
                    out.extend(session.handle(ClientMessage::Touch(*touch), true));
                }
                out.extend(session.handle(ClientMessage::Tick { count: None }, true));
            }
        }
        out
    }

    pub fn last_scores(messages: &[ServerMessage]) -> Vec<f32> {
        messages
            .iter()
            .rev()
            .find_map(|m| match m {
                ServerMessage::Scores { scores, .. } => Some(scores.clone()),
                _ => None,
            })
            .unwrap_or_default()
    }
}

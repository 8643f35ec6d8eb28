use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use eskin_bench::{digit_stream, spiking_network, spikes};
use eskin_core::codec::{delta_decode, read_aer, write_aer};
use eskin_core::scan::{simulate_single_touch, ScanConfig, Tracker};
use eskin_core::sensor::{Crossbar, FrontEndConfig, PressureField, TaxelModel};
use eskin_core::snn::{quantize_params, NetworkKind, Params, SpikingNetwork};

fn scan(c: &mut Criterion) {
    let cfg = ScanConfig::default();
    c.bench_function("scan/single_touch_sweep_16x16", |b| {
        let mut xb = Crossbar::new(TaxelModel::default(), FrontEndConfig::default()).unwrap();
        b.iter(|| simulate_single_touch(16, &mut xb, &cfg).unwrap())
    });
    c.bench_function("scan/tracker_step", |b| {
        let field = PressureField::single_touch(16, 16, (7, 9), 300.0);
        let mut xb = Crossbar::new(TaxelModel::default(), FrontEndConfig::default()).unwrap();
        let mut tracker = Tracker::new(16, 16, cfg);
        b.iter(|| tracker.step(black_box(&field), &mut xb).unwrap())
    });
}

fn codec(c: &mut Criterion) {
    let stream = digit_stream(5);
    let bytes = write_aer(&stream);
    c.bench_function("codec/write_aer", |b| b.iter(|| write_aer(black_box(&stream))));
    c.bench_function("codec/read_aer", |b| b.iter(|| read_aer(black_box(&bytes)).unwrap()));
    c.bench_function("codec/delta_decode", |b| b.iter(|| delta_decode(black_box(&stream)).unwrap()));
}

fn inference(c: &mut Criterion) {
    let x = spikes(&digit_stream(3));
    let float = spiking_network(NetworkKind::ConvSnn, 5);
    c.bench_function("snn/conv_snn_forward_f32", |b| b.iter(|| float.forward(black_box(&x)).unwrap()));
    c.bench_function("snn/conv_snn_forward_dense_f32", |b| {
        b.iter(|| float.forward_dense(black_box(&x)).unwrap())
    });
    let spec = NetworkKind::ConvSnn.default_spec();
    let layers = spec.resolve().unwrap();
    let params = Params::init(&layers, &[2.0, 2.0, 3.0], 5);
    let q = quantize_params(&params, 5).unwrap();
    let int = SpikingNetwork::from_quantized(&spec, Default::default(), &q).unwrap();
    c.bench_function("snn/conv_snn_forward_q5", |b| b.iter(|| int.forward(black_box(&x)).unwrap()));
    let snn = spiking_network(NetworkKind::Snn, 5);
    c.bench_function("snn/fc_snn_forward_f32", |b| {
        b.iter_batched(|| x.clone(), |x| snn.forward(&x).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = scan, codec, inference
}
criterion_main!(benches);

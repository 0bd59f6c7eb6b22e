use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use openhealth::netproto::{decode_frame, encode_frame, FrameType, ReplayWindow};
use openhealth::pipeline::FeatureExtractor;
use openhealth::sim::{run_scenario, Scenario};
use openhealth_bench::{har_models, har_recording, short_scenario};

fn features(c: &mut Criterion) {
    let rec = har_recording();
    let window = &rec.samples[1000..1128];
    let fx = FeatureExtractor::new(128);
    let mut g = c.benchmark_group("features");
    g.throughput(Throughput::Elements(128));
    g.bench_function("extract_w128_7ch", |b| b.iter(|| fx.extract(black_box(window))));
    g.finish();
}

fn forward(c: &mut Criterion) {
    let (float, dequant) = har_models();
    let x = vec![0.25; float.input_dim()];
    c.bench_function("forward_float", |b| b.iter(|| float.forward(black_box(&x)).unwrap()));
    c.bench_function("forward_int8_dequantized", |b| b.iter(|| dequant.forward(black_box(&x)).unwrap()));
}

fn frames(c: &mut Criterion) {
    let key = [7u8; 16];
    let payload = [0x5a; 12];
    let mut g = c.benchmark_group("frame");
    g.bench_function("encode_12B", |b| {
        b.iter(|| encode_frame(FrameType::Data, 1, black_box(9), &payload, &key).unwrap())
    });
    let frame = encode_frame(FrameType::Data, 1, 9, &payload, &key).unwrap();
    g.bench_function("decode_12B", |b| {
        b.iter_batched(
            ReplayWindow::default,
            |mut w| decode_frame(black_box(&frame), &key, &mut w),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

fn scenario(c: &mut Criterion) {
    let scenario = Scenario::from_config(&short_scenario(5)).expect("default scenario");
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    g.bench_function("two_devices_5min", |b| b.iter(|| run_scenario(&scenario, black_box(1)).unwrap()));
    g.finish();
}

criterion_group!(benches, features, forward, frames, scenario);
criterion_main!(benches);

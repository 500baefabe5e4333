use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wavecls_core::nn::init::uniform_tensor;
use wavecls_core::nn::{ConvParams, ConvSpec};
use wavecls_core::trainer::batch_gradient;
use wavecls_core::{tsne, EncoderConfig, EncoderParams, Model, ModelConfig, Segment, TsneConfig};

const SEG_LEN: usize = 16_000;

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv1d");
    for dilation in [1, 64, 512] {
        let layer = ConvParams::<f32>::init(ConvSpec::new(40, 40, 2, dilation, true), 1).unwrap();
        let x = uniform_tensor::<f32>(&[40, SEG_LEN], 1.0, 2);
        let up = uniform_tensor::<f32>(&[40, SEG_LEN], 1.0, 3);
        g.bench_with_input(BenchmarkId::new("forward", dilation), &x, |b, x| {
            b.iter(|| layer.forward(black_box(x)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("backward", dilation), &x, |b, x| {
            b.iter(|| layer.backward(black_box(x), &up).unwrap())
        });
    }
    g.finish();
}

fn encoder(c: &mut Criterion) {
    let mut g = c.benchmark_group("encoder");
    g.sample_size(10).measurement_time(Duration::from_secs(10));
    let enc = EncoderParams::<f32>::build(&EncoderConfig::default(), 4).unwrap();
    let x = uniform_tensor::<f32>(&[1, SEG_LEN], 0.5, 5);
    g.bench_function("forward_default", |b| b.iter(|| enc.forward(black_box(&x)).unwrap()));
    g.finish();
}

fn model(c: &mut Criterion) {
    let mut g = c.benchmark_group("compact_model");
    g.sample_size(10);
    let model = Model::<f32>::build(&ModelConfig::compact(4, SEG_LEN), 6).unwrap();
    let x = uniform_tensor::<f32>(&[1, SEG_LEN], 0.5, 7);
    g.bench_function("forward", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
    g.bench_function("loss_and_grad", |b| b.iter(|| model.loss_and_grad(black_box(&x), 1).unwrap()));
    let segments: Vec<Segment> = (0..8)
        .map(|i| Segment {
            parent_track_id: format!("t{i}"),
            offset: 0,
            samples: uniform_tensor::<f32>(&[SEG_LEN], 0.5, 10 + i).data().to_vec(),
            label: i as usize % 4,
        })
        .collect();
    let batch: Vec<&Segment> = segments.iter().collect();
    for deterministic in [false, true] {
        g.bench_with_input(BenchmarkId::new("batch8_gradient", deterministic), &deterministic, |b, &d| {
            b.iter(|| batch_gradient(&model, black_box(&batch), d).unwrap())
        });
    }
    g.finish();
}

fn embedding(c: &mut Criterion) {
    let mut g = c.benchmark_group("tsne");
    g.sample_size(10);
    for m in [60, 150] {
        let points: Vec<Vec<f64>> = (0..m)
            .map(|i| uniform_tensor::<f64>(&[20], 1.0, 100 + i as u64).data().to_vec())
            .collect();
        let cfg = TsneConfig {
            perplexity: 10.0,
            ..TsneConfig::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(m), &points, |b, p| b.iter(|| tsne(p, &cfg).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, conv, encoder, model, embedding);
criterion_main!(benches);

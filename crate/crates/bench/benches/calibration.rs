use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use detcal::calibration::{fit, FeatureSpec, FitOptions};
use detcal::simulator::{generate_feature_stream, GaussianStreamSpec};

fn stream(n: usize) -> Vec<detcal::LabeledSample> {
    generate_feature_stream(&GaussianStreamSpec {
        mu_plus: vec![0.75, 0.52, 0.48],
        mu_minus: vec![0.45, 0.45, 0.55],
        sigma_plus: vec![0.020, 0.004, 0.0, 0.004, 0.030, 0.003, 0.0, 0.003, 0.025],
        sigma_minus: vec![0.045, -0.006, 0.002, -0.006, 0.050, 0.0, 0.002, 0.0, 0.040],
        prior_correct: 0.5,
        n,
        seed: 3,
    })
    .unwrap()
}

fn bench_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    for n in [1_000, 10_000, 100_000] {
        let samples = stream(n);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &samples, |b, s| {
            b.iter(|| fit(black_box(s), FeatureSpec::default(), FitOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_calibrate(c: &mut Criterion) {
    let samples = stream(10_000);
    let model = fit(&samples, FeatureSpec::default(), FitOptions::default()).unwrap();
    let probe = samples[0].features.clone();
    c.bench_function("calibrate_one", |b| b.iter(|| model.calibrate(black_box(&probe)).unwrap()));
}

criterion_group!(benches, bench_fit, bench_calibrate);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use detcal::ece::{bin_outcomes, ece};
use detcal::matching::{aggregate, match_scene};
use detcal_bench::scenes;

fn bench_ece(c: &mut Criterion) {
    let data = scenes(100_000);
    let summaries: Vec<_> = data
        .iter()
        .map(|s| match_scene(&s.detections, &s.truths, 0.5))
        .collect();
    let labeled = aggregate(&summaries).labeled_confidences();

    let mut group = c.benchmark_group("ece");
    group.throughput(Throughput::Elements(labeled.len() as u64));
    for m in [10, 15, 100] {
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| ece(black_box(&labeled), m).unwrap())
        });
    }
    group.finish();

    c.bench_function("reliability_bins_10", |b| b.iter(|| bin_outcomes(black_box(&labeled), 10)));
}

criterion_group!(benches, bench_ece);
criterion_main!(benches);

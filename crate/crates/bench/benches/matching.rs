use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use detcal::{match_scene, BBox};
use detcal_bench::{crowded_scene, scenes};

fn iou(c: &mut Criterion) {
    let a = BBox::new(0.4, 0.5, 0.3, 0.2).unwrap();
    let b = BBox::new(0.45, 0.52, 0.25, 0.3).unwrap();
    c.bench_function("iou", |bench| bench.iter(|| black_box(&a).iou(black_box(&b))));
}

fn crowded(c: &mut Criterion) {
    let mut group = c.benchmark_group("match_scene");
    for k in [4, 16, 64, 256] {
        let (dets, truths) = crowded_scene(k);
        group.throughput(Throughput::Elements(dets.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |bench, _| {
            bench.iter(|| match_scene(black_box(&dets), black_box(&truths), 0.5))
        });
    }
    group.finish();
}

fn dataset(c: &mut Criterion) {
    let data = scenes(100_000);
    let n: usize = data.iter().map(|s| s.detections.len()).sum();
    let mut group = c.benchmark_group("match_dataset");
    group.throughput(Throughput::Elements(n as u64));
    group.sample_size(20);
    group.bench_function("100k_detections", |bench| {
        bench.iter(|| {
            data.iter()
                .map(|s| match_scene(&s.detections, &s.truths, 0.5).tp)
                .sum::<usize>()
        })
    });
    group.finish();
}

criterion_group!(benches, iou, crowded, dataset);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use groupseg::grouping::hsic_affinity;
use groupseg::{segment_group, shapley_permutation, MaskingBaseline, Points, SegmentationConfig};
use groupseg_bench::{fixture, hsic_samples, shifted_series};

fn affinity(c: &mut Criterion) {
    let mut g = c.benchmark_group("hsic_affinity");
    for n in [200, 500] {
        let samples = hsic_samples(n, 6, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &samples, |b, s| {
            b.iter(|| hsic_affinity(black_box(s)).unwrap())
        });
    }
    g.finish();
}

fn segmentation(c: &mut Criterion) {
    let mut g = c.benchmark_group("segment_group");
    g.sample_size(20);
    for t in [128, 512] {
        let series = shifted_series(t, 2);
        let config = SegmentationConfig { num_permutations: 50, ..SegmentationConfig::new(t / 10, 3) };
        g.bench_with_input(BenchmarkId::from_parameter(t), &series, |b, w| {
            b.iter(|| segment_group(Points::new(w.as_slice(), 1).unwrap(), black_box(&config)).unwrap())
        });
    }
    g.finish();
}

fn shapley(c: &mut Criterion) {
    let fx = fixture(4);
    let predictor = fx.spec().build().unwrap();
    let baseline = MaskingBaseline::from_background(&fx.background, Default::default(), 0).unwrap();
    let mut g = c.benchmark_group("shapley_permutation");
    for m in [10, 100] {
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, &m| {
            b.iter(|| shapley_permutation(&*predictor, &fx.targets[0], &fx.players, m, &baseline, 7).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, affinity, segmentation, shapley);
criterion_main!(benches);

use cifbm_bench::target;
use cifbm_core::fisher::{fisher_eta, fisher_mixed, fisher_theta};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn transforms(c: &mut Criterion) {
    let mut g = c.benchmark_group("transforms");
    for n in [6, 10, 14] {
        let d = target(n);
        g.bench_with_input(BenchmarkId::new("eta", n), &d, |b, d| {
            b.iter(|| black_box(d.clone()).eta().as_slice()[1])
        });
        g.bench_with_input(BenchmarkId::new("theta", n), &d, |b, d| {
            b.iter(|| black_box(d.clone()).theta().psi())
        });
    }
    g.finish();
}

fn fisher(c: &mut Criterion) {
    let mut g = c.benchmark_group("fisher");
    for n in [4, 6, 8] {
        let d = target(n);
        g.bench_with_input(BenchmarkId::new("theta", n), &d, |b, d| {
            b.iter(|| fisher_theta(black_box(d)))
        });
        g.bench_with_input(BenchmarkId::new("eta", n), &d, |b, d| {
            b.iter(|| fisher_eta(black_box(d)))
        });
        g.bench_with_input(BenchmarkId::new("mixed_l2", n), &d, |b, d| {
            b.iter(|| fisher_mixed(black_box(d), 2).unwrap())
        });
    }
    g.finish();
}

fn mixed_reconstruction(c: &mut Criterion) {
    let mut g = c.benchmark_group("mixed_reconstruction");
    g.sample_size(10);
    for (n, l) in [(6, 2), (8, 3), (10, 5)] {
        let m = target(n).mixed(l).unwrap();
        g.bench_with_input(BenchmarkId::new(format!("l{l}"), n), &m, |b, m| {
            b.iter(|| m.to_distribution().unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, transforms, fisher, mixed_reconstruction);
criterion_main!(benches);

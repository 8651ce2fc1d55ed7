use cifbm_bench::{samples, sbm};
use cifbm_core::rng::stream;
use cifbm_core::{rbm, sbm as sbm_train, TrainConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn stationary(c: &mut Criterion) {
    let mut g = c.benchmark_group("sbm_stationary");
    for n in [6, 10, 14] {
        let p = sbm(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| {
            b.iter(|| p.stationary().unwrap())
        });
    }
    g.finish();
}

fn gibbs(c: &mut Criterion) {
    let mut g = c.benchmark_group("sbm_gibbs_sweep");
    for n in [10, 100] {
        let p = sbm(n);
        let mut rng = stream(9, &[n as u64]);
        let mut x = vec![0u8; n];
        g.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| {
            b.iter(|| p.sweep(black_box(&mut x), &mut rng))
        });
    }
    g.finish();
}

fn cd_epoch(c: &mut Criterion) {
    let mut g = c.benchmark_group("cd1_epoch");
    g.sample_size(20);
    let mut cfg = TrainConfig::new(0.1, 1);
    cfg.n_h = Some(5);
    for count in [500, 50_000] {
        let data = samples(5, count);
        g.bench_with_input(BenchmarkId::new("rbm", count), &data, |b, data| {
            b.iter(|| rbm::train_cd1(data, &cfg, None).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("sbm", count), &data, |b, data| {
            b.iter(|| sbm_train::train_cd1(data, &cfg, None).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, stationary, gibbs, cd_epoch);
criterion_main!(benches);

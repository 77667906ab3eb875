use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use wassl::wasserstein::{
    exact_lp_loss, onehot_loss, onehot_loss_grad, sinkhorn_loss, SinkhornParams,
};
use wassl_bench::instance;

fn bench_onehot(c: &mut Criterion) {
    let mut group = c.benchmark_group("onehot_loss");
    for n in [16, 64, 256, 1024, 4096] {
        let (s, _, d) = instance(n);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(onehot_loss(&s, n / 2, &d).unwrap().loss));
        });
    }
    group.finish();
}

fn bench_onehot_grad(c: &mut Criterion) {
    let mut group = c.benchmark_group("onehot_loss_grad");
    for n in [16, 256, 1024] {
        let (s, _, d) = instance(n);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(onehot_loss_grad(&s, n / 2, &d).unwrap().wrt_logits));
        });
    }
    group.finish();
}

fn bench_sinkhorn(c: &mut Criterion) {
    let mut group = c.benchmark_group("sinkhorn_loss_10iter");
    group.sample_size(20);
    // Fixed iteration count isolates the per-iteration O(n^2) kernel.
    let params = SinkhornParams {
        epsilon: 0.5,
        max_iter: 10,
        tol: 1e-300,
    };
    for n in [16, 64, 256, 1024] {
        let (s, t, d) = instance(n);
        group.throughput(Throughput::Elements((n * n) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(sinkhorn_loss(&s, &t, &d, &params).unwrap().loss));
        });
    }
    group.finish();
}

fn bench_exact_lp(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_lp_loss");
    group.sample_size(20);
    for n in [8, 16, 32, 64] {
        let (s, t, d) = instance(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(exact_lp_loss(&s, &t, &d).unwrap().loss));
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_onehot,
    bench_onehot_grad,
    bench_sinkhorn,
    bench_exact_lp
);
criterion_main!(benches);

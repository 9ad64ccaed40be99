use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hyprl_bench::{ball_point, cloud, rng, uniform};
use hyprl_core::hyperbolicity::{delta_maxmin, delta_rel, pairwise_dist};
use hyprl_core::poincare::{self, batched};
use hyprl_core::{BallConfig, Metric, Tape};

fn scalar_kernels(c: &mut Criterion) {
    let config = BallConfig::new(1.0).unwrap();
    let mut r = rng(1);
    let mut group = c.benchmark_group("poincare");
    for dim in [2, 32, 256] {
        let x = ball_point(&mut r, dim, config);
        let y = ball_point(&mut r, dim, config);
        let v = poincare::logmap0(&y);
        group.bench_with_input(BenchmarkId::new("mobius_add", dim), &dim, |b, _| {
            b.iter(|| poincare::mobius_add(black_box(&x), black_box(&y)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dist", dim), &dim, |b, _| {
            b.iter(|| poincare::dist(black_box(&x), black_box(&y)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("expmap0", dim), &dim, |b, _| {
            b.iter(|| poincare::expmap0(black_box(&v), config).unwrap())
        });
    }
    group.finish();
}

fn batched_logits(c: &mut Criterion) {
    let config = BallConfig::new(1.0).unwrap();
    let mut r = rng(2);
    let (batch, dim, planes) = (256, 32, 16);
    let x = uniform(&mut r, batch, dim, 0.02);
    let p = uniform(&mut r, planes, dim, 0.02);
    let w = uniform(&mut r, planes, dim, 0.5);
    c.bench_function("gyroplane_logits/forward_backward_256x32x16", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let (xv, pv, wv) = (
                tape.leaf(x.clone()),
                tape.leaf(p.clone()),
                tape.leaf(w.clone()),
            );
            let logits = batched::gyroplane_logits(xv, pv, wv, config).unwrap();
            tape.backward(logits.sum()).unwrap()
        })
    });
}

fn hyperbolicity(c: &mut Criterion) {
    let mut r = rng(3);
    let mut group = c.benchmark_group("delta");
    group.sample_size(20);
    for n in [64, 256] {
        let pts = cloud(&mut r, n, 8);
        let d = pairwise_dist(&pts, Metric::Euclidean).unwrap();
        group.bench_with_input(BenchmarkId::new("maxmin", n), &n, |b, _| {
            b.iter(|| delta_maxmin(black_box(&d), 0).unwrap())
        });
    }
    let pts = cloud(&mut r, 1024, 32);
    group.bench_function("delta_rel_sample256_of_1024", |b| {
        b.iter(|| delta_rel(&pts, Metric::Euclidean, 256, &mut rng(4)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, scalar_kernels, batched_logits, hyperbolicity);
criterion_main!(benches);

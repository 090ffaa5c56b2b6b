//! Spline transform and masked-network kernel microbenchmarks.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use flowdistill_core::linalg::Matrix;
use flowdistill_core::nn::build_made;
use flowdistill_core::rng;
use flowdistill_core::rqs;

fn spline(c: &mut Criterion) {
    let bins = 8;
    let mut r = rng::stream(3, &[1]);
    let raw: Vec<f64> = (0..rqs::params_per_dim(bins))
        .map(|_| rng::uniform(&mut r, -2.0, 2.0))
        .collect();
    c.bench_function("rqs_forward_scalar", |b| {
        b.iter(|| black_box(rqs::transform_forward(black_box(0.37), &raw, bins, 3.0)))
    });
    c.bench_function("rqs_inverse_scalar", |b| {
        b.iter(|| black_box(rqs::transform_inverse(black_box(0.37), &raw, bins, 3.0)))
    });
}

fn made_forward(c: &mut Criterion) {
    let mut net = build_made(256, 10, &[64, 64], 23, 1).unwrap();
    net.randomize(0.3, 2);
    let mut r = rng::stream(4, &[1]);
    let x = Matrix::from_vec(
        128,
        256,
        (0..128 * 256).map(|_| rng::uniform(&mut r, -3.0, 3.0)).collect(),
    );
    let cond = Matrix::from_vec(
        128,
        10,
        (0..128 * 10).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect(),
    );
    c.bench_function("made_forward_batch_128x256", |b| {
        b.iter(|| black_box(net.forward_batch(&x, &cond).unwrap()))
    });
}

criterion_group!(benches, spline, made_forward);
criterion_main!(benches);

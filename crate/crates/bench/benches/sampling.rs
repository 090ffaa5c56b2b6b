//! MAF vs IAF sampling throughput at a few data dimensions.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use flowdistill_bench::{bench_conditions, bench_pair};
use flowdistill_core::flow::draw_standard_normal;
use flowdistill_core::rng;

fn sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("sampling");
    group.sample_size(10);
    for &d in &[64usize, 256] {
        let (teacher, student) = bench_pair(d, 4, &[64, 64]);
        let cond = bench_conditions(4);
        let z = draw_standard_normal(4, d, &mut rng::stream(1, &[2]));
        group.bench_with_input(BenchmarkId::new("iaf_fast_decode", d), &d, |b, _| {
            b.iter(|| black_box(student.fast_decode(&z, &cond).unwrap()))
        });
        if d <= 64 {
            group.bench_with_input(BenchmarkId::new("maf_slow_decode", d), &d, |b, _| {
                b.iter(|| black_box(teacher.slow_decode(&z, &cond).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, sampling);
criterion_main!(benches);

//! Shared fixtures for the criterion benchmarks.

use flowdistill_core::flow::{build_stack, FlowDirection, FlowStack};
use flowdistill_core::linalg::Matrix;
use flowdistill_core::rng;

/// A randomized MAF/IAF pair of the given size with matching permutations.
pub fn bench_pair(data_dim: usize, layers: usize, hidden: &[usize]) -> (FlowStack, FlowStack) {
    let mut teacher = build_stack(
        FlowDirection::Maf,
        data_dim,
        10,
        layers,
        hidden,
        8,
        14.0,
        99,
    )
    .expect("stack");
    teacher.randomize(0.3, 7);
    let mut student = FlowStack::new_student_like(&teacher, 100).expect("student");
    student.randomize(0.3, 8);
    (teacher, student)
}

/// Deterministic condition batch.
pub fn bench_conditions(n: usize) -> Matrix {
    let mut r = rng::stream(5, &[0xc0]);
    Matrix::from_vec(n, 10, (0..n * 10).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect())
}

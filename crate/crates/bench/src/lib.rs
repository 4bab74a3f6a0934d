//! Seeded inputs shared by the benchmarks.

use ortho_shot::dbt::ToeplitzSpec;
use ortho_shot::learner::stream_rng;
use ortho_shot::Tensor4;
use rand::Rng;

pub fn uniform_tensor(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut r = stream_rng(seed, 0);
    Tensor4::from_fn(dims, |_| r.random_range(-1.0..1.0))
}

pub fn uniform_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut r = stream_rng(seed, 1);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Random square Toeplitz matrix of order `n`.
pub fn toeplitz(n: usize, seed: u64) -> ToeplitzSpec {
    let mut r = stream_rng(seed, 2);
    let col: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut row: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    row[0] = col[0];
    ToeplitzSpec::new(col, row).expect("column and row agree at the corner")
}

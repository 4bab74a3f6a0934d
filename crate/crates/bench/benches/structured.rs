use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ortho_shot::dbt::{build_dbt, toeplitz_matvec_fast};
use ortho_shot::tensor::conv2d;
use ortho_shot::ConvGeometry;
use ortho_shot_bench::{toeplitz, uniform_tensor, uniform_vec};

fn toeplitz_matvec(c: &mut Criterion) {
    let mut group = c.benchmark_group("toeplitz_matvec");
    for n in [64, 256, 1024, 4096] {
        let t = toeplitz(n, 1);
        let dense = t.to_dense();
        let x = uniform_vec(n, 2);
        group.bench_with_input(BenchmarkId::new("fft", n), &n, |b, _| {
            b.iter(|| toeplitz_matvec_fast(black_box(&t), black_box(&x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("dense", n), &n, |b, _| {
            b.iter(|| dense.matvec(black_box(&x)).unwrap())
        });
    }
    group.finish();
}

fn lowering(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv_lowering");
    let g = ConvGeometry::new(1, 1).unwrap();
    for side in [8, 16] {
        let k = uniform_tensor([16, 16, 3, 3], 3);
        let x = uniform_tensor([1, 16, side, side], 4);
        group.bench_with_input(BenchmarkId::new("build_dbt", side), &side, |b, _| {
            b.iter(|| build_dbt(black_box(&k), (16, side, side), g).unwrap())
        });
        let m = build_dbt(&k, (16, side, side), g).unwrap();
        group.bench_with_input(BenchmarkId::new("dbt_matvec", side), &side, |b, _| {
            b.iter(|| m.matvec(black_box(x.data())).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("conv2d", side), &side, |b, _| {
            b.iter(|| conv2d(black_box(&x), black_box(&k), g).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, toeplitz_matvec, lowering);
criterion_main!(benches);

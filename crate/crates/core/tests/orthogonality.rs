mod common;

use common::*;
use ortho_shot::dbt::build_dbt;
use ortho_shot::ortho::{
    column_ortho_loss, column_ortho_loss_and_grad, full_overlap_geometry, lemma1_gap, ortho_loss,
    ortho_loss_and_grad, ortho_loss_grad, self_conv,
};
use ortho_shot::{ConvGeometry, Tensor4};
use proptest::prelude::*;
use rand::Rng;

/// Self-convolution rebuilt from the dense lowering onto a `(2P + k)²` input
/// without padding: row `(j, centre)` against every row of filter `i`.
fn gram_block_oracle(k: &Tensor4, p: usize, s: usize) -> Tensor4 {
    let [n, c, kk, _] = k.dims();
    let side = 2 * p + kk;
    let m = build_dbt(k, (c, side, side), ConvGeometry::new(0, s).unwrap()).unwrap();
    let q = 2 * p / s + 1;
    let ctr = q / 2;
    let mut out = Tensor4::zeros([n, n, q, q]);
    for i in 0..n {
        for j in 0..n {
            let a = m.matrix().row(m.row_index(j, ctr, ctr));
            for u in 0..q {
                for v in 0..q {
                    let b = m.matrix().row(m.row_index(i, 2 * ctr - u, 2 * ctr - v));
                    out.set([i, j, u, v], dot(a, b));
                }
            }
        }
    }
    out
}

#[test]
fn self_conv_equals_row_gram_block_on_50_instances() {
    let mut r = rng(21);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(1..=4);
        let c = r.random_range(1..=4);
        let k = r.random_range(1..=3);
        let p = r.random_range(0..k);
        let divisors: Vec<usize> = (1..=p.max(1)).filter(|s| p % s == 0).collect();
        let s = divisors[r.random_range(0..divisors.len())];
        let kernel = randn([n, c, k, k], &mut r);
        let sc = self_conv(&kernel, ConvGeometry::new(p, s).unwrap()).unwrap();
        worst = worst.max(sc.tensor().max_abs_diff(&gram_block_oracle(&kernel, p, s)));
    }
    assert!(worst <= 1e-10, "{worst:e}");
}

#[test]
fn ortho_loss_equals_dense_residual() {
    let mut r = rng(22);
    for _ in 0..10 {
        let kernel = randn([2, 2, 3, 3], &mut r);
        let oracle = gram_block_oracle(&kernel, 2, 1);
        let q = oracle.dims()[2];
        let mut res = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for u in 0..q {
                    for v in 0..q {
                        let target = if i == j && u == q / 2 && v == q / 2 { 1.0 } else { 0.0 };
                        res += (oracle.get([i, j, u, v]) - target).powi(2);
                    }
                }
            }
        }
        let loss = ortho_loss(&kernel, ConvGeometry::new(2, 1).unwrap(), 0.3).unwrap();
        assert!((loss - 0.3 * res).abs() < 1e-10 * (1.0 + loss));
    }
}

/// Column Gram residual of the central input pixel of every channel: the
/// lowering onto a `(2k − 1)²` input with stride 1 contains every output
/// that touches pixel `(k − 1, k − 1)`.
fn dense_column_cost(k: &Tensor4) -> f64 {
    let [_, c, kk, _] = k.dims();
    let side = 2 * kk - 1;
    let m = build_dbt(k, (c, side, side), ConvGeometry::valid()).unwrap();
    let mt = m.matrix().transpose();
    let mut total = 0.0;
    for ci in 0..c {
        let a = mt.row(m.col_index(ci, kk - 1, kk - 1));
        for col in 0..m.cols() {
            let target = if col == m.col_index(ci, kk - 1, kk - 1) { 1.0 } else { 0.0 };
            total += (dot(a, mt.row(col)) - target).powi(2);
        }
    }
    total
}

#[test]
fn column_cost_matches_dense_up_to_shape_constant() {
    let mut r = rng(23);
    for (n, c, k) in [(3, 2, 3), (2, 3, 2), (1, 1, 1)] {
        let gaps: Vec<f64> = (0..10)
            .map(|_| {
                let kernel = randn([n, c, k, k], &mut r);
                column_ortho_loss(&kernel).unwrap() - dense_column_cost(&kernel)
            })
            .collect();
        let spread = gaps.iter().map(|g| (g - gaps[0]).abs()).fold(0.0, f64::max);
        assert!(spread < 1e-9, "shape {:?}: {gaps:?}", (n, c, k));
    }
}

#[test]
fn dense_frobenius_identity() {
    let mut r = rng(24);
    for (m, n) in [(3, 7), (6, 2), (4, 4)] {
        let a: Vec<Vec<f64>> = (0..m).map(|_| randn_vec(n, &mut r)).collect();
        let aat: f64 = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| (dot(&a[i], &a[j]) - f64::from(i == j)).powi(2))
            .sum();
        let col = |j: usize| a.iter().map(|row| row[j]).collect::<Vec<_>>();
        let ata: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (dot(&col(i), &col(j)) - f64::from(i == j)).powi(2))
            .sum();
        assert!((aat - ata - (m as f64 - n as f64)).abs() < 1e-9);
    }
}

#[test]
fn row_minus_column_cost_is_constant_per_shape() {
    let mut r = rng(25);
    for (n, c, k) in [(4, 2, 3), (2, 4, 3), (3, 3, 2)] {
        let g = full_overlap_geometry(k, 1).unwrap();
        let kernels: Vec<Tensor4> = (0..20).map(|_| randn([n, c, k, k], &mut r)).collect();
        let gap = lemma1_gap(&kernels, g).unwrap();
        assert!(gap.max_deviation <= 1e-8, "{:?}", gap);
        assert!((gap.mean - (n as f64 - c as f64)).abs() <= 1e-8);
        for kernel in &kernels {
            let (_, row) = ortho_loss_and_grad(kernel, g, 1.0).unwrap();
            let (_, col) = column_ortho_loss_and_grad(kernel, 1.0).unwrap();
            assert!(row.max_abs_diff(&col) <= 1e-8);
        }
    }
}

#[test]
fn regularizer_gradients_match_finite_differences() {
    let mut r = rng(26);
    let cases = [([2, 1, 3, 3], 2, 1), ([3, 2, 3, 3], 2, 2), ([2, 3, 2, 2], 1, 1), ([4, 2, 1, 1], 0, 1)];
    for (dims, p, s) in cases {
        let kernel = randn(dims, &mut r);
        let g = ConvGeometry::new(p, s).unwrap();
        let grad = ortho_loss_grad(&kernel, g, 0.5).unwrap();
        let fd = central_difference(
            |v| ortho_loss(&Tensor4::new(dims, v.to_vec()).unwrap(), g, 0.5).unwrap(),
            kernel.data(),
            1e-6,
        );
        assert!(rel_err(&fd, grad.data()) <= 1e-5, "{dims:?}");

        let (_, cgrad) = column_ortho_loss_and_grad(&kernel, 0.5).unwrap();
        let cfd = central_difference(
            |v| 0.5 * column_ortho_loss(&Tensor4::new(dims, v.to_vec()).unwrap()).unwrap(),
            kernel.data(),
            1e-6,
        );
        assert!(rel_err(&cfd, cgrad.data()) <= 1e-5, "column {dims:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ortho_loss_is_nonnegative_and_self_conv_symmetric(seed in any::<u64>(), n in 1usize..4, c in 1usize..4, k in 1usize..4) {
        let mut r = rng(seed);
        let kernel = randn([n, c, k, k], &mut r);
        let g = full_overlap_geometry(k, 1).unwrap();
        prop_assert!(ortho_loss(&kernel, g, 1.0).unwrap() >= 0.0);
        let sc = self_conv(&kernel, g).unwrap();
        let t = sc.tensor();
        let q = sc.shifts();
        for i in 0..n {
            for j in 0..n {
                for u in 0..q {
                    for v in 0..q {
                        prop_assert!((t.get([i, j, u, v]) - t.get([j, i, q - 1 - u, q - 1 - v])).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn orthonormal_one_by_one_banks_have_zero_loss(seed in any::<u64>(), n in 1usize..6) {
        // a random permutation with random signs is orthonormal
        let mut r = rng(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let signs: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let kernel = Tensor4::from_fn([n, n, 1, 1], |[a, b, _, _]| if perm[a] == b { signs[a] } else { 0.0 });
        prop_assert_eq!(ortho_loss(&kernel, ConvGeometry::valid(), 1.0).unwrap(), 0.0);
        prop_assert!(ortho_loss_grad(&kernel, ConvGeometry::valid(), 1.0).unwrap().data().iter().all(|v| *v == 0.0));
    }
}

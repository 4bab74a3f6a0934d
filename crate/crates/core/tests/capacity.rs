use ortho_shot::capacity::{effective_depth, ldr_budget, vc_bound, NetSpec};
use proptest::prelude::*;

/// Independent evaluation of `L̄·W·log2(pU) + L̄·L·W·log2(k)` from per-layer counts.
fn surrogate(per_layer: &[u64], units: &[u64], p: u64, k: u64) -> f64 {
    let mut cumulative = 0u64;
    let mut sum_cumulative = 0u64;
    for w in per_layer {
        cumulative += w;
        sum_cumulative += cumulative;
    }
    let lbar = sum_cumulative as f64 / cumulative as f64;
    let u: u64 = units.iter().sum();
    let w = cumulative as f64;
    lbar * w * ((p * u) as f64).log2() + lbar * per_layer.len() as f64 * w * (k as f64).log2()
}

#[test]
fn hand_computed_surrogates() {
    // Σ W_l = 1000, W = 400, U = 200, p = 2: B = 1000·log2(400)
    let spec = NetSpec::new(vec![100, 200, 300, 400], vec![50; 4]).unwrap();
    assert_eq!(vc_bound(&spec).unwrap(), 1000.0 * 400f64.log2());
    assert_eq!(vc_bound(&spec).unwrap(), surrogate(&[100; 4], &[50; 4], 2, 1));

    // single layer, W = 8, U = 2, p = 2: B = 8·log2(4) = 16
    assert_eq!(vc_bound(&NetSpec::new(vec![8], vec![2]).unwrap()).unwrap(), 16.0);

    // k = 4: extra L̄·L·W·2 = 1.5·2·4·2 = 24 on top of 1.5·4·log2(8) = 18
    let mut s = NetSpec::new(vec![2, 4], vec![2, 2]).unwrap();
    s.degree = 4;
    assert_eq!(vc_bound(&s).unwrap(), 42.0);
}

#[test]
fn ldr_arithmetic() {
    let b = ldr_budget(1024, 1024, 2).unwrap();
    assert_eq!(b.params, 4096);
    assert_eq!(b.dense_params, 1_048_576);
    assert_eq!(b.matvec_fast, 4096);
    assert_eq!(b.ratio, 256.0);
    assert_eq!(ldr_budget(300, 200, 3).unwrap().params, 1500);
    // fixed rank: compression keeps growing with n
    let ratios: Vec<f64> = [64, 256, 1024].iter().map(|&n| ldr_budget(n, n, 2).unwrap().ratio).collect();
    assert!(ratios.windows(2).all(|w| w[1] > w[0]));
}

fn spec_strategy() -> impl Strategy<Value = (Vec<u64>, Vec<u64>, u64, u64)> {
    (1usize..7).prop_flat_map(|l| {
        (
            prop::collection::vec(1u64..500, l),
            prop::collection::vec(1u64..200, l),
            1u64..5,
            1u64..4,
        )
    })
}

fn build(per: &[u64], units: &[u64], p: u64, k: u64) -> NetSpec {
    let mut s = NetSpec::from_layer_params(per, units.to_vec()).unwrap();
    s.pieces = p;
    s.degree = k;
    s
}

proptest! {
    #[test]
    fn effective_depth_lies_between_one_and_depth((per, units, _, _) in spec_strategy()) {
        let s = NetSpec::from_layer_params(&per, units).unwrap();
        let d = effective_depth(&s).unwrap();
        prop_assert!(d >= 1.0 && d <= per.len() as f64 + 1e-12);
    }

    #[test]
    fn bound_matches_independent_formula((per, units, p, k) in spec_strategy()) {
        prop_assume!(p * units.iter().sum::<u64>() >= 2);
        let b = vc_bound(&build(&per, &units, p, k)).unwrap();
        let o = surrogate(&per, &units, p, k);
        prop_assert!((b - o).abs() <= 1e-9 * o.max(1.0));
        prop_assert!(b >= 0.0);
    }

    #[test]
    fn bound_is_monotone_in_each_count((per, units, p, k) in spec_strategy(), layer in 0usize..7, bump in 1u64..50) {
        prop_assume!(p * units.iter().sum::<u64>() >= 2);
        let l = layer % per.len();
        let base = vc_bound(&build(&per, &units, p, k)).unwrap();
        let mut per2 = per.clone();
        per2[l] += bump;
        prop_assert!(vc_bound(&build(&per2, &units, p, k)).unwrap() >= base);
        let mut units2 = units.clone();
        units2[l] += bump;
        prop_assert!(vc_bound(&build(&per, &units2, p, k)).unwrap() >= base);
        prop_assert!(vc_bound(&build(&per, &units, p + 1, k)).unwrap() >= base);
    }

    #[test]
    fn doubling_parameters_at_least_doubles_bound((per, units, p, k) in spec_strategy()) {
        prop_assume!(p * units.iter().sum::<u64>() >= 2);
        let doubled: Vec<u64> = per.iter().map(|w| 2 * w).collect();
        let a = vc_bound(&build(&per, &units, p, k)).unwrap();
        let b = vc_bound(&build(&doubled, &units, p, k)).unwrap();
        prop_assert!(b >= 2.0 * a * (1.0 - 1e-12));
    }

    #[test]
    fn compression_beats_dense_below_threshold(m in 1u64..2000, n in 1u64..2000, r in 1u64..64) {
        let b = ldr_budget(m, n, r).unwrap();
        prop_assert_eq!(b.params, m * r + n * r);
        prop_assert_eq!(b.dense_params, m * n);
        if (r as f64) < (m * n) as f64 / (m + n) as f64 {
            prop_assert!(b.ratio > 1.0);
        }
    }
}

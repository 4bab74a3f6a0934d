mod common;

use common::rng;
use ortho_shot::augment::{
    apply_cutmix, apply_selfmix, cutmix_box, erase_rect, horizontal_flip, maxup_select, mixup, rotate90,
    selfmix_patch, Image, Rect, SoftLabel,
};
use proptest::prelude::*;
use rand::Rng;

fn random_image(c: usize, h: usize, w: usize, r: &mut rand_chacha::ChaCha8Rng) -> Image {
    Image::new(c, h, w, (0..c * h * w).map(|_| r.random::<f64>()).collect()).unwrap()
}

#[test]
fn cutmix_label_weight_is_exact_area_ratio_over_1000_draws() {
    let mut r = rng(41);
    for _ in 0..1000 {
        let (h, w) = (r.random_range(1..=16), r.random_range(1..=16));
        let a = random_image(2, h, w, &mut r);
        // b differs from a everywhere, so replaced pixels are countable
        let b = Image::new(2, h, w, a.data().iter().map(|v| if *v < 0.5 { *v + 0.5 } else { *v - 0.5 }).collect()).unwrap();
        let (la, lb) = (SoftLabel::one_hot(1, 3), SoftLabel::one_hot(2, 3));
        let alpha = [0.2, 1.0, 3.0][r.random_range(0..3)];
        let rect = cutmix_box(h, w, alpha, &mut r).unwrap();
        let (img, label) = apply_cutmix(&a, &la, &b, &lb, rect).unwrap();
        let kept = (0..h * w).filter(|&p| img.data()[p] == a.data()[p]).count();
        let weight = kept as f64 / (h * w) as f64;
        assert_eq!(label.as_slice()[1], weight);
        assert_eq!(label.as_slice()[2], 1.0 - weight);
        assert_eq!(label.as_slice()[0], 0.0);
    }
}

#[test]
fn mixup_endpoints_are_exact_and_midpoint_symmetric() {
    let mut r = rng(42);
    let a = random_image(3, 5, 4, &mut r);
    let b = random_image(3, 5, 4, &mut r);
    let la = SoftLabel::new(vec![0.25, 0.75, 0.0]).unwrap();
    let lb = SoftLabel::one_hot(2, 3);
    assert_eq!(mixup(&a, &la, &b, &lb, 1.0).unwrap(), (a.clone(), la.clone()));
    assert_eq!(mixup(&a, &la, &b, &lb, 0.0).unwrap(), (b.clone(), lb.clone()));
    let (m1, l1) = mixup(&a, &la, &b, &lb, 0.5).unwrap();
    let (m2, l2) = mixup(&b, &lb, &a, &la, 0.5).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(l1, l2);
    assert!(mixup(&a, &la, &b, &lb, 1.5).is_err());
}

#[test]
fn selfmix_copies_source_into_destination_only() {
    let mut r = rng(43);
    for _ in 0..200 {
        let (h, w) = (r.random_range(2..=10), r.random_range(2..=10));
        let a = random_image(2, h, w, &mut r);
        let patch = selfmix_patch(h, w, &mut r).unwrap();
        let out = apply_selfmix(&a, patch);
        let (s, d) = (patch.source, patch.dest);
        for c in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    if d.contains(y, x) {
                        let (sy, sx) = (s.y0 + y - d.y0, s.x0 + x - d.x0);
                        assert_eq!(out.get(c, y, x), a.get(c, sy, sx));
                    } else {
                        assert_eq!(out.get(c, y, x), a.get(c, y, x));
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn maxup_equals_brute_force_argmax(losses in prop::collection::vec(0u8..6, 1..=8)) {
        let views: Vec<f64> = losses.iter().map(|&v| f64::from(v) / 3.0).collect();
        let mut best = 0;
        for (i, v) in views.iter().enumerate() {
            if *v > views[best] {
                best = i;
            }
        }
        prop_assert_eq!(maxup_select(|v: &f64| *v, &views).unwrap(), best);
    }

    #[test]
    fn flips_and_rotations_compose_bitwise(seed in any::<u64>(), c in 1usize..4, h in 1usize..9, w in 1usize..9) {
        let mut r = rng(seed);
        let a = random_image(c, h, w, &mut r);
        prop_assert_eq!(horizontal_flip(&horizontal_flip(&a)), a.clone());
        prop_assert_eq!(rotate90(&rotate90(&rotate90(&rotate90(&a, 1), 1), 1), 1), a.clone());
        prop_assert_eq!(rotate90(&rotate90(&a, 1), 3), a.clone());
        prop_assert_eq!(rotate90(&rotate90(&a, 2), 2), a.clone());
        prop_assert_eq!(rotate90(&a, 1).dims(), (c, w, h));
        let empty = Rect { y0: h / 2, y1: h / 2, x0: 0, x1: w };
        prop_assert_eq!(erase_rect(&a, empty), a);
    }
}

//! Self-check suite: each property compares a production routine against an
//! independent oracle on seeded random instances and reports PASS/FAIL.
//!
//! [`Fault`] lets callers corrupt the dense lowering before it is used, to
//! confirm the suite actually notices broken math.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::augment::{
    apply_cutmix, cutmix_box, horizontal_flip, maxup_select, mixup, rotate90, Image, SoftLabel,
};
use crate::capacity::{effective_depth, ldr_budget, vc_bound, NetSpec};
use crate::dbt::{build_dbt, flatten_input, toeplitz_matvec_fast, DbtMatrix, ToeplitzSpec};
use crate::error::Result;
use crate::fft::{circular_convolve_fft, circular_convolve_naive};
use crate::ortho::{
    column_ortho_loss_and_grad, full_overlap_geometry, ortho_loss, ortho_loss_and_grad, self_conv,
};
use crate::tensor::{conv2d, conv2d_grads, ConvGeometry, Tensor4};

/// Deliberate corruption applied inside the suite.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Adds the given amount to the first nonzero entry of every lowering `M`.
    PerturbDbt(f64),
}

impl std::str::FromStr for Fault {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Fault::None),
            "perturb_m" | "perturb_dbt" => Ok(Fault::PerturbDbt(1e-3)),
            other => Err(crate::Error::Config(format!("unknown fault '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}::{} ({})", self.suite, self.name, self.detail)
    }
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_tensor<R: Rng + ?Sized>(dims: [usize; 4], rng: &mut R) -> Tensor4 {
    Tensor4::from_fn(dims, |_| rng.sample(StandardNormal))
}

/// A random small convolution problem: kernel, single-image input and geometry.
#[derive(Debug, Clone)]
pub struct ConvInstance {
    pub kernel: Tensor4,
    pub input: Tensor4,
    pub geometry: ConvGeometry,
}

/// Draws `N, C ≤ max_nc`, `k ≤ max_k`, `H, W ≤ max_hw` with a valid geometry.
pub fn random_conv_instance<R: Rng + ?Sized>(
    max_nc: usize,
    max_k: usize,
    max_hw: usize,
    rng: &mut R,
) -> ConvInstance {
    loop {
        let n = rng.random_range(1..=max_nc);
        let c = rng.random_range(1..=max_nc);
        let kh = rng.random_range(1..=max_k);
        let kw = rng.random_range(1..=max_k);
        let padding = rng.random_range(0..kh.min(kw));
        let stride = rng.random_range(1..=2);
        let h = rng.random_range(kh.max(1)..=max_hw);
        let w = rng.random_range(kw.max(1)..=max_hw);
        let g = ConvGeometry::new(padding, stride).expect("stride ≥ 1");
        if g.out_dims(h, w, kh, kw).is_ok() {
            return ConvInstance {
                kernel: random_tensor([n, c, kh, kw], rng),
                input: random_tensor([1, c, h, w], rng),
                geometry: g,
            };
        }
    }
}

/// Rebuilds the self-convolution of a square kernel from inner products of
/// rows of its lowering.
///
/// The kernel is lowered without padding onto a `(2P + k)²` input, which
/// places a central output position whose every shift by `±P/S` stays inside
/// the output grid. Entry `[i, j, u, v]` is then the inner product of the
/// central row of filter `j` with the row of filter `i` displaced by
/// `(c − u, c − v)`, `c = P/S`.
pub fn self_conv_via_lowering(k: &Tensor4, g: ConvGeometry, fault: Fault) -> Result<Tensor4> {
    let [n, c, kk, _] = k.dims();
    let side = 2 * g.padding + kk;
    let mut m = build_dbt(k, (c, side, side), ConvGeometry::new(0, g.stride)?)?;
    inject(&mut m, fault);
    let q = 2 * g.padding / g.stride + 1;
    let center = q / 2;
    let row = |f: usize, i: usize, j: usize| m.matrix().row(m.row_index(f, i, j)).to_vec();
    let mut out = Tensor4::zeros([n, n, q, q]);
    for i in 0..n {
        for j in 0..n {
            let base = row(j, center, center);
            for u in 0..q {
                for v in 0..q {
                    let other = row(i, 2 * center - u, 2 * center - v);
                    out.set([i, j, u, v], base.iter().zip(&other).map(|(a, b)| a * b).sum());
                }
            }
        }
    }
    Ok(out)
}

fn inject(m: &mut DbtMatrix, fault: Fault) {
    if let Fault::PerturbDbt(delta) = fault {
        let dense = m.matrix_mut();
        if let Some(v) = dense.data.iter_mut().find(|v| **v != 0.0) {
            *v += delta;
        }
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let fp = f(&p);
            p[i] = x[i] - h;
            let fm = f(&p);
            p[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

struct Suite {
    results: Vec<PropertyResult>,
}

impl Suite {
    fn check(&mut self, suite: &'static str, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) {
        let (passed, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        self.results.push(PropertyResult {
            suite,
            name,
            passed,
            detail,
        });
    }
}

fn bounded(value: f64, tol: f64, what: &str) -> (bool, String) {
    (value <= tol, format!("{what} {value:.3e} ≤ {tol:.0e}"))
}

/// Runs every property with the given seed and fault.
pub fn run_all(seed: u64, fault: Fault) -> Vec<PropertyResult> {
    let mut s = Suite { results: Vec::new() };
    let rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };

    s.check("dbt_matrix", "lowering_matches_conv", || {
        let mut r = rng(1);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let inst = random_conv_instance(3, 3, 6, &mut r);
            let [_, c, h, w] = inst.input.dims();
            let mut m = build_dbt(&inst.kernel, (c, h, w), inst.geometry)?;
            inject(&mut m, fault);
            let y = m.matvec(&flatten_input(&inst.input)?)?;
            let conv = conv2d(&inst.input, &inst.kernel, inst.geometry)?;
            worst = worst.max(max_abs_diff(&y, conv.data()));
        }
        Ok(bounded(worst, 1e-12, "max |Mx − conv| over 200 instances"))
    });

    s.check("dbt_matrix", "transpose_matches_conv_adjoint", || {
        let mut r = rng(2);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let inst = random_conv_instance(3, 3, 6, &mut r);
            let [_, c, h, w] = inst.input.dims();
            let mut m = build_dbt(&inst.kernel, (c, h, w), inst.geometry)?;
            inject(&mut m, fault);
            let y = conv2d(&inst.input, &inst.kernel, inst.geometry)?;
            let dy = random_tensor(y.dims(), &mut r);
            let (dx, _) = conv2d_grads(&inst.input, &inst.kernel, inst.geometry, &dy)?;
            let mt = m.matrix().transpose();
            worst = worst.max(max_abs_diff(&mt.matvec(dy.data())?, dx.data()));
        }
        Ok(bounded(worst, 1e-12, "max |Mᵀg − conv adjoint|"))
    });

    s.check("dbt_matrix", "fft_toeplitz_matches_dense", || {
        let mut r = rng(3);
        let mut worst: f64 = 0.0;
        let mut n = 16;
        while n <= 1024 {
            let col: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
            let mut row: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
            row[0] = col[0];
            let t = ToeplitzSpec::new(col, row)?;
            let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
            let fast = toeplitz_matvec_fast(&t, &x)?;
            let dense = t.dense_matvec(&x)?;
            worst = worst.max(max_abs_diff(&fast, &dense));
            n *= 4;
        }
        Ok(bounded(worst, 1e-9, "max |fast − dense| for n = 16..1024"))
    });

    s.check("dbt_matrix", "fft_circular_convolution", || {
        let mut r = rng(4);
        let mut worst: f64 = 0.0;
        for n in [1, 2, 7, 16, 33, 128] {
            let a: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
            let b: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
            worst = worst.max(max_abs_diff(&circular_convolve_fft(&a, &b)?, &circular_convolve_naive(&a, &b)?));
        }
        Ok(bounded(worst, 1e-10, "max |fft − naive|"))
    });

    s.check("ortho_reg", "self_conv_matches_row_gram", || {
        let mut r = rng(5);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let n = r.random_range(1..=4);
            let c = r.random_range(1..=4);
            let k = r.random_range(1..=3);
            let stride = if k > 1 && r.random_bool(0.3) { k - 1 } else { 1 };
            let kernel = random_tensor([n, c, k, k], &mut r);
            let g = full_overlap_geometry(k, stride)?;
            let fast = self_conv(&kernel, g)?;
            let oracle = self_conv_via_lowering(&kernel, g, fault)?;
            worst = worst.max(fast.tensor().max_abs_diff(&oracle));
        }
        Ok(bounded(worst, 1e-10, "max |self_conv − M·Mᵀ block|"))
    });

    s.check("ortho_reg", "loss_zero_on_orthonormal_bank", || {
        let mut r = rng(6);
        let n = 4;
        // Gram–Schmidt on random 1×1 filters
        let mut rows: Vec<Vec<f64>> = Vec::new();
        while rows.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
            for u in &rows {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            rows.push(v.into_iter().map(|a| a / norm).collect());
        }
        let k = Tensor4::new([n, n, 1, 1], rows.concat())?;
        let loss = ortho_loss(&k, ConvGeometry::valid(), 1.0)?;
        let random = random_tensor([3, 2, 3, 3], &mut r);
        let positive = ortho_loss(&random, full_overlap_geometry(3, 1)?, 1.0)?;
        Ok((loss < 1e-24 && positive > 0.0, format!("orthonormal loss {loss:.3e}, random loss {positive:.3e}")))
    });

    s.check("ortho_reg", "gradient_matches_finite_differences", || {
        let mut r = rng(7);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let n = r.random_range(1..=3);
            let c = r.random_range(1..=3);
            let k = r.random_range(1..=3);
            let kernel = random_tensor([n, c, k, k], &mut r);
            let g = full_overlap_geometry(k, 1)?;
            let (_, grad) = ortho_loss_and_grad(&kernel, g, 0.7)?;
            let fd = finite_difference(
                |x| {
                    let t = Tensor4::new(kernel.dims(), x.to_vec()).expect("same dims");
                    ortho_loss(&t, g, 0.7).expect("valid")
                },
                kernel.data(),
                1e-5,
            );
            worst = worst.max(relative_error(&fd, grad.data()));
        }
        Ok(bounded(worst, 1e-5, "relative error"))
    });

    s.check("ortho_reg", "row_column_gap_constant", || {
        let mut r = rng(8);
        let mut worst: f64 = 0.0;
        for (n, c, k) in [(4, 2, 3), (2, 4, 3), (3, 3, 2)] {
            let g = full_overlap_geometry(k, 1)?;
            let kernels: Vec<Tensor4> = (0..20).map(|_| random_tensor([n, c, k, k], &mut r)).collect();
            worst = worst.max(crate::ortho::lemma1_gap(&kernels, g)?.max_deviation);
        }
        Ok(bounded(worst, 1e-8, "max deviation of row − column cost"))
    });

    s.check("ortho_reg", "row_column_gradients_equal", || {
        let mut r = rng(9);
        let mut worst: f64 = 0.0;
        for (n, c, k) in [(4, 2, 3), (2, 4, 3), (3, 3, 2)] {
            let g = full_overlap_geometry(k, 1)?;
            for _ in 0..20 {
                let kernel = random_tensor([n, c, k, k], &mut r);
                let (_, row) = ortho_loss_and_grad(&kernel, g, 1.0)?;
                let (_, col) = column_ortho_loss_and_grad(&kernel, 1.0)?;
                worst = worst.max(row.max_abs_diff(&col));
            }
        }
        Ok(bounded(worst, 1e-8, "max |∇row − ∇column|"))
    });

    s.check("augment", "cutmix_weight_is_area_ratio", || {
        let mut r = rng(10);
        let (h, w) = (12, 9);
        let a = Image::filled(1, h, w, 0.0);
        let b = Image::filled(1, h, w, 1.0);
        let (la, lb) = (SoftLabel::one_hot(0, 2), SoftLabel::one_hot(1, 2));
        let mut mismatches = 0;
        for _ in 0..1000 {
            let rect = cutmix_box(h, w, 1.0, &mut r)?;
            let (img, label) = apply_cutmix(&a, &la, &b, &lb, rect)?;
            let kept = img.data().iter().filter(|v| **v == 0.0).count();
            if label.as_slice()[0] != kept as f64 / (h * w) as f64 {
                mismatches += 1;
            }
        }
        Ok((mismatches == 0, format!("{mismatches} mismatches in 1000 draws")))
    });

    s.check("augment", "mixup_endpoints_exact", || {
        let mut r = rng(11);
        let a = Image::new(2, 3, 3, (0..18).map(|_| r.random::<f64>()).collect())?;
        let b = Image::new(2, 3, 3, (0..18).map(|_| r.random::<f64>()).collect())?;
        let (la, lb) = (SoftLabel::one_hot(0, 3), SoftLabel::one_hot(2, 3));
        let (i1, l1) = mixup(&a, &la, &b, &lb, 1.0)?;
        let (i0, l0) = mixup(&a, &la, &b, &lb, 0.0)?;
        let ok = i1 == a && l1 == la && i0 == b && l0 == lb;
        Ok((ok, "λ = 1 returns a, λ = 0 returns b".into()))
    });

    s.check("augment", "maxup_matches_brute_force", || {
        let mut r = rng(12);
        let mut mismatches = 0;
        for _ in 0..500 {
            let m = r.random_range(1..=8);
            let losses: Vec<f64> = (0..m).map(|_| (r.random_range(0..5) as f64) * 0.25).collect();
            let mut best = 0;
            for i in 1..m {
                if losses[i] > losses[best] {
                    best = i;
                }
            }
            if maxup_select(|v: &f64| *v, &losses)? != best {
                mismatches += 1;
            }
        }
        Ok((mismatches == 0, format!("{mismatches} mismatches in 500 pools")))
    });

    s.check("augment", "flip_rotate_involutions", || {
        let mut r = rng(13);
        let mut ok = true;
        for _ in 0..20 {
            let (h, w) = (r.random_range(1..=7), r.random_range(1..=7));
            let img = Image::new(3, h, w, (0..3 * h * w).map(|_| r.random::<f64>()).collect())?;
            ok &= horizontal_flip(&horizontal_flip(&img)) == img;
            ok &= rotate90(&rotate90(&img, 2), 2) == img;
            ok &= rotate90(&rotate90(&img, 1), 3) == img;
            ok &= rotate90(&img, 4) == img;
        }
        Ok((ok, "flip∘flip, rot180∘rot180, rot90∘rot270, rot360 are identities".into()))
    });

    s.check("capacity", "vc_bound_worked_example", || {
        let spec = NetSpec::new(vec![100, 200, 300, 400], vec![50; 4])?;
        let b = vc_bound(&spec)?;
        // Σ W_l = 1000, U = 200, p = 2
        let expected = 1000.0 * 400f64.log2();
        Ok((b == expected, format!("B = {b}, expected {expected}")))
    });

    s.check("capacity", "effective_depth_in_range", || {
        let mut r = rng(14);
        let mut ok = true;
        for _ in 0..200 {
            let l = r.random_range(1..=8);
            let per: Vec<u64> = (0..l).map(|_| r.random_range(1..1000)).collect();
            let spec = NetSpec::from_layer_params(&per, vec![1; l])?;
            let d = effective_depth(&spec)?;
            let direct = spec.cumulative_params.iter().sum::<u64>() as f64 / per.iter().sum::<u64>() as f64;
            ok &= (1.0..=l as f64).contains(&d) && d == direct;
        }
        Ok((ok, "1 ≤ L̄ ≤ L and matches re-summation".into()))
    });

    s.check("capacity", "ldr_budget_arithmetic", || {
        let b = ldr_budget(1024, 1024, 2)?;
        let square = ldr_budget(64, 64, 1)?;
        let ok = b.params == 4096 && b.dense_params == 1_048_576 && b.ratio == 256.0 && square.ratio == 32.0;
        Ok((ok, format!("params {} dense {} ratio {}", b.params, b.dense_params, b.ratio)))
    });

    s.results
}

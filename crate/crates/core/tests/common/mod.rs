#![allow(dead_code)]

use ortho_shot::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4 {
    Tensor4::from_fn(dims, |_| rng.sample(StandardNormal))
}

pub fn randn_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Direct summation of a zero-padded strided cross-correlation.
pub fn naive_conv(x: &Tensor4, k: &Tensor4, padding: usize, stride: usize) -> Tensor4 {
    let [b, c, h, w] = x.dims();
    let [n, _, kh, kw] = k.dims();
    let ho = (h + 2 * padding - kh) / stride + 1;
    let wo = (w + 2 * padding - kw) / stride + 1;
    let mut y = Tensor4::zeros([b, n, ho, wo]);
    for bi in 0..b {
        for ni in 0..n {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                let hh = (i * stride + u) as i64 - padding as i64;
                                let ww = (j * stride + v) as i64 - padding as i64;
                                if hh >= 0 && ww >= 0 && (hh as usize) < h && (ww as usize) < w {
                                    acc += x.get([bi, ci, hh as usize, ww as usize]) * k.get([ni, ci, u, v]);
                                }
                            }
                        }
                    }
                    y.set([bi, ni, i, j], acc);
                }
            }
        }
    }
    y
}

pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let a = f(&p);
            p[i] = x[i] - h;
            let b = f(&p);
            p[i] = x[i];
            (a - b) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) == 0.0 {
        0.0
    } else {
        d / na.max(nb)
    }
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Row-major dense matrix product `A·Bᵀ` over rows given as slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

//! Dense 4-axis tensors and 2-D cross-correlation with hand-derived gradients.
//!
//! Layout is row-major NCHW throughout. "Convolution" here is cross-correlation
//! (no kernel flip) with zero padding, the usual deep-learning convention.

use nalgebra::{DMatrixView, DMatrixViewMut};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major tensor with four axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected = dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::geometry(format!(
                "tensor of dims {dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    /// Builds a tensor by evaluating `f` at every index in row-major order.
    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for a in 0..dims[0] {
            for b in 0..dims[1] {
                for c in 0..dims[2] {
                    for d in 0..dims[3] {
                        data.push(f([a, b, c, d]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        let [_, d1, d2, d3] = self.dims;
        ((idx[0] * d1 + idx[1]) * d2 + idx[2]) * d3 + idx[3]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> f64 {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Tensor4) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, s: f64) -> Tensor4 {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor4) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Swaps the first two axes, e.g. turns an `N×C×k×k` kernel into `C×N×k×k`.
    pub fn swap_leading_axes(&self) -> Tensor4 {
        let [d0, d1, d2, d3] = self.dims;
        let plane = d2 * d3;
        let mut out = vec![0.0; self.data.len()];
        for a in 0..d0 {
            for b in 0..d1 {
                let src = (a * d1 + b) * plane;
                let dst = (b * d0 + a) * plane;
                out[dst..dst + plane].copy_from_slice(&self.data[src..src + plane]);
            }
        }
        Tensor4 {
            dims: [d1, d0, d2, d3],
            data: out,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Zero padding and stride of a convolution; identical on both spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub padding: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(padding: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::geometry("stride must be at least 1"));
        }
        Ok(Self { padding, stride })
    }

    /// Stride 1, no padding.
    pub fn valid() -> Self {
        Self {
            padding: 0,
            stride: 1,
        }
    }

    /// Output length along one axis. Rejects geometries where the stride does
    /// not divide `input + 2P - kernel` instead of truncating.
    pub fn out_len(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::geometry("stride must be at least 1"));
        }
        if kernel == 0 {
            return Err(Error::geometry("kernel extent must be at least 1"));
        }
        let padded = input + 2 * self.padding;
        if padded < kernel {
            return Err(Error::geometry(format!(
                "kernel extent {kernel} exceeds padded input {padded}"
            )));
        }
        let span = padded - kernel;
        if !span.is_multiple_of(self.stride) {
            return Err(Error::geometry(format!(
                "(input {input} + 2*{} - kernel {kernel}) is not divisible by stride {}",
                self.padding, self.stride
            )));
        }
        Ok(span / self.stride + 1)
    }

    /// Output spatial dims for an `h×w` input and `kh×kw` kernel.
    pub fn out_dims(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        Ok((self.out_len(h, kh)?, self.out_len(w, kw)?))
    }
}

/// Range of output indices `j` for which `j*stride + tap - padding` lands in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, len: usize, tap: usize, g: ConvGeometry) -> (usize, usize) {
    let p = g.padding as isize;
    let s = g.stride as isize;
    let t = tap as isize;
    // smallest j with j*s + t - p >= 0
    let lo = if p > t { (p - t + s - 1) / s } else { 0 };
    // largest j with j*s + t - p <= len - 1
    let top = len as isize - 1 + p - t;
    let hi = if top < 0 { 0 } else { (top / s + 1).min(out_len as isize) };
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

fn check_conv_shapes(x: &Tensor4, k: &Tensor4, g: ConvGeometry) -> Result<(usize, usize)> {
    let [_, c, h, w] = x.dims();
    let [_, kc, kh, kw] = k.dims();
    if c != kc {
        return Err(Error::geometry(format!(
            "input has {c} channels but kernel expects {kc}"
        )));
    }
    g.out_dims(h, w, kh, kw)
}

fn check_finite(t: &Tensor4, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite values")))
    }
}

/// Unfolds one image into a column-major `(Ho·Wo) × (C·kh·kw)` patch matrix;
/// taps that fall in the zero padding stay 0.
#[allow(clippy::too_many_arguments)]
fn im2col(xb: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, ho: usize, wo: usize, g: ConvGeometry, cols: &mut [f64]) {
    let p = ho * wo;
    cols.fill(0.0);
    for ci in 0..c {
        let plane = &xb[ci * h * w..(ci + 1) * h * w];
        for u in 0..kh {
            let (ilo, ihi) = valid_range(ho, h, u, g);
            for v in 0..kw {
                let (jlo, jhi) = valid_range(wo, w, v, g);
                if jlo >= jhi {
                    continue;
                }
                let r = (ci * kh + u) * kw + v;
                let col = &mut cols[r * p..(r + 1) * p];
                for i in ilo..ihi {
                    let row = (i * g.stride + u - g.padding) * w;
                    let dst = &mut col[i * wo + jlo..i * wo + jhi];
                    if g.stride == 1 {
                        let base = row + jlo + v - g.padding;
                        dst.copy_from_slice(&plane[base..base + (jhi - jlo)]);
                    } else {
                        for (d, j) in dst.iter_mut().zip(jlo..jhi) {
                            *d = plane[row + j * g.stride + v - g.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto the image.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize, ho: usize, wo: usize, g: ConvGeometry, dxb: &mut [f64]) {
    let p = ho * wo;
    for ci in 0..c {
        let plane = &mut dxb[ci * h * w..(ci + 1) * h * w];
        for u in 0..kh {
            let (ilo, ihi) = valid_range(ho, h, u, g);
            for v in 0..kw {
                let (jlo, jhi) = valid_range(wo, w, v, g);
                if jlo >= jhi {
                    continue;
                }
                let r = (ci * kh + u) * kw + v;
                let col = &cols[r * p..(r + 1) * p];
                for i in ilo..ihi {
                    let row = (i * g.stride + u - g.padding) * w;
                    for j in jlo..jhi {
                        plane[row + j * g.stride + v - g.padding] += col[i * wo + j];
                    }
                }
            }
        }
    }
}

/// Cross-correlation `Y[b,n,i,j] = Σ_{c,u,v} Xpad[b,c,iS+u,jS+v]·K[n,c,u,v]`.
///
/// Each batch element is an independent patch-matrix product, so the result
/// does not depend on the rayon schedule.
pub fn conv2d(x: &Tensor4, k: &Tensor4, g: ConvGeometry) -> Result<Tensor4> {
    let (ho, wo) = check_conv_shapes(x, k, g)?;
    check_finite(x, "convolution input")?;
    check_finite(k, "convolution kernel")?;
    let [b, c, h, w] = x.dims();
    let [n, _, kh, kw] = k.dims();
    let mut out = Tensor4::zeros([b, n, ho, wo]);
    let (p, ckk) = (ho * wo, c * kh * kw);
    if out.is_empty() || ckk == 0 {
        return Ok(out);
    }
    let xd = x.data();
    // row-major N×CKK read column-major is its transpose
    let kt = DMatrixView::from_slice(k.data(), ckk, n);
    out.data_mut()
        .par_chunks_mut(n * p)
        .enumerate()
        .for_each(|(bi, yb)| {
            let mut cols = vec![0.0; p * ckk];
            im2col(&xd[bi * c * h * w..(bi + 1) * c * h * w], c, h, w, kh, kw, ho, wo, g, &mut cols);
            let cm = DMatrixView::from_slice(&cols, p, ckk);
            let mut y = DMatrixViewMut::from_slice(yb, p, n);
            y.gemm(1.0, &cm, &kt, 0.0);
        });
    Ok(out)
}

/// Gradients of `⟨conv2d(X, K), dY⟩` with respect to `X` and `K`.
pub fn conv2d_grads(
    x: &Tensor4,
    k: &Tensor4,
    g: ConvGeometry,
    dy: &Tensor4,
) -> Result<(Tensor4, Tensor4)> {
    let (ho, wo) = check_conv_shapes(x, k, g)?;
    let [b, c, h, w] = x.dims();
    let [n, _, kh, kw] = k.dims();
    if dy.dims() != [b, n, ho, wo] {
        return Err(Error::geometry(format!(
            "upstream gradient has dims {:?}, forward output is {:?}",
            dy.dims(),
            [b, n, ho, wo]
        )));
    }
    check_finite(dy, "upstream gradient")?;
    let mut dx = Tensor4::zeros(x.dims());
    let mut dk = Tensor4::zeros(k.dims());
    let (p, ckk) = (ho * wo, c * kh * kw);
    if dy.is_empty() || ckk == 0 || dx.is_empty() {
        return Ok((dx, dk));
    }
    let xd = x.data();
    let dyd = dy.data();
    let kmat = DMatrixView::from_slice(k.data(), ckk, n).transpose();
    let chw = c * h * w;
    // batch elements are accumulated in index order so dK is schedule-independent
    let mut dkt = DMatrixViewMut::from_slice(dk.data_mut(), ckk, n);
    let mut cols = vec![0.0; p * ckk];
    let mut dcols = vec![0.0; p * ckk];
    for (bi, dxb) in dx.data_mut().chunks_mut(chw).enumerate() {
        im2col(&xd[bi * chw..(bi + 1) * chw], c, h, w, kh, kw, ho, wo, g, &mut cols);
        let cm = DMatrixView::from_slice(&cols, p, ckk);
        let gy = DMatrixView::from_slice(&dyd[bi * n * p..(bi + 1) * n * p], p, n);
        dkt.gemm_tr(1.0, &cm, &gy, 1.0);
        let mut dc = DMatrixViewMut::from_slice(&mut dcols, p, ckk);
        dc.gemm(1.0, &gy, &kmat, 0.0);
        col2im(&dcols, c, h, w, kh, kw, ho, wo, g, dxb);
    }
    Ok((dx, dk))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(dims: [usize; 4], start: f64) -> Tensor4 {
        let n: usize = dims.iter().product();
        Tensor4::new(dims, (0..n).map(|i| start + i as f64).collect()).unwrap()
    }

    // Independent direct-summation reference with explicit bounds checks.
    fn conv_reference(x: &Tensor4, k: &Tensor4, p: usize, s: usize) -> Tensor4 {
        let [b, c, h, w] = x.dims();
        let [n, _, kh, kw] = k.dims();
        let ho = (h + 2 * p - kh) / s + 1;
        let wo = (w + 2 * p - kw) / s + 1;
        Tensor4::from_fn([b, n, ho, wo], |[bi, ni, i, j]| {
            let mut acc = 0.0;
            for ci in 0..c {
                for u in 0..kh {
                    for v in 0..kw {
                        let hh = (i * s + u) as isize - p as isize;
                        let ww = (j * s + v) as isize - p as isize;
                        if hh >= 0 && ww >= 0 && (hh as usize) < h && (ww as usize) < w {
                            acc += x.get([bi, ci, hh as usize, ww as usize]) * k.get([ni, ci, u, v]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn identity_kernel_is_identity_map() {
        let x = Tensor4::new([1, 1, 2, 2], vec![0.3, -1.0, 2.5, 4.0]).unwrap();
        let k = Tensor4::new([1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &k, ConvGeometry::valid()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = seq([2, 3, 5, 5], -7.0);
        let k = Tensor4::zeros([4, 3, 3, 3]);
        let y = conv2d(&x, &k, ConvGeometry::new(1, 1).unwrap()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diagonal_kernel_on_three_by_three() {
        let x = seq([1, 1, 3, 3], 1.0);
        let k = Tensor4::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &k, ConvGeometry::valid()).unwrap();
        assert_eq!(y.data(), &[6.0, 8.0, 12.0, 14.0]);
        assert_eq!(y, conv_reference(&x, &k, 0, 1));
    }

    #[test]
    fn matches_reference_with_padding_and_stride() {
        let x = Tensor4::from_fn([2, 2, 7, 5], |[a, b, c, d]| ((a * 31 + b * 7 + c * 3 + d) as f64).sin());
        let k = Tensor4::from_fn([3, 2, 3, 3], |[a, b, c, d]| ((a * 5 + b * 11 + c + d * 2) as f64).cos());
        for (p, s) in [(0, 1), (1, 1), (2, 1), (1, 2), (2, 2)] {
            let g = ConvGeometry::new(p, s).unwrap();
            if g.out_dims(7, 5, 3, 3).is_err() {
                continue;
            }
            let y = conv2d(&x, &k, g).unwrap();
            assert!(y.max_abs_diff(&conv_reference(&x, &k, p, s)) < 1e-12, "p={p} s={s}");
        }
    }

    #[test]
    fn rejects_non_divisible_geometry() {
        let g = ConvGeometry::new(0, 2).unwrap();
        assert!(matches!(g.out_len(6, 3), Err(Error::Geometry(_))));
        assert_eq!(g.out_len(7, 3).unwrap(), 3);
        assert!(ConvGeometry::new(0, 0).is_err());
    }

    #[test]
    fn rejects_channel_mismatch_and_nan() {
        let x = Tensor4::zeros([1, 2, 3, 3]);
        let k = Tensor4::zeros([1, 3, 1, 1]);
        assert!(matches!(conv2d(&x, &k, ConvGeometry::valid()), Err(Error::Geometry(_))));
        let mut x = Tensor4::zeros([1, 1, 3, 3]);
        x.set([0, 0, 1, 1], f64::NAN);
        let k = Tensor4::zeros([1, 1, 1, 1]);
        assert!(matches!(conv2d(&x, &k, ConvGeometry::valid()), Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let x = seq([1, 2, 4, 4], 0.5);
        let k = seq([2, 2, 3, 3], -3.0);
        let g = ConvGeometry::new(1, 1).unwrap();
        let dy = Tensor4::zeros([1, 2, 4, 4]);
        let (dx, dk) = conv2d_grads(&x, &k, g, &dy).unwrap();
        assert!(dx.data().iter().chain(dk.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_kernel_grad_is_outer_product_sum() {
        let x = Tensor4::from_fn([2, 3, 4, 4], |[a, b, c, d]| (a + 2 * b) as f64 - 0.25 * (c * d) as f64);
        let k = Tensor4::from_fn([2, 3, 1, 1], |[a, b, _, _]| (a as f64) - (b as f64) * 0.5);
        let dy = Tensor4::from_fn([2, 2, 4, 4], |[a, b, c, d]| ((a + b + c + 2 * d) as f64).sin());
        let (_, dk) = conv2d_grads(&x, &k, ConvGeometry::valid(), &dy).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let mut expect = 0.0;
                for b in 0..2 {
                    for i in 0..4 {
                        for j in 0..4 {
                            expect += dy.get([b, n, i, j]) * x.get([b, c, i, j]);
                        }
                    }
                }
                assert!((dk.get([n, c, 0, 0]) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_wrong_upstream_shape() {
        let x = Tensor4::zeros([1, 1, 4, 4]);
        let k = Tensor4::zeros([1, 1, 3, 3]);
        let dy = Tensor4::zeros([1, 1, 4, 4]);
        assert!(conv2d_grads(&x, &k, ConvGeometry::valid(), &dy).is_err());
    }

    #[test]
    fn swap_leading_axes_transposes() {
        let k = seq([2, 3, 2, 2], 0.0);
        let t = k.swap_leading_axes();
        assert_eq!(t.dims(), [3, 2, 2, 2]);
        for n in 0..2 {
            for c in 0..3 {
                assert_eq!(t.get([c, n, 1, 0]), k.get([n, c, 1, 0]));
            }
        }
        assert_eq!(t.swap_leading_axes(), k);
    }
}

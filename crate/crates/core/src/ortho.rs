//! Orthogonality regularization of convolution kernels through self-convolution.
//!
//! Convolving a kernel bank `K` (N filters, C channels, k×k) with itself,
//! treating the filters as a batch of N inputs, yields an `N×N×q×q` tensor
//! (`q = 2P/S + 1`) whose entry `[i, j, u, v]` is the inner product of filter
//! `i` with filter `j` shifted by `((u − P/S)·S, (v − P/S)·S)`. These are exactly
//! the row inner products of the doubly-block-Toeplitz lowering `M` of the
//! convolution, so the rows of `M` are orthonormal precisely when the
//! self-convolution equals an identity matrix at the centre shift and zero
//! elsewhere.
//!
//! The column case runs the same construction on the transposed kernel
//! (`C×N×k×k`, padding `k − 1`, stride 1). For stride-1 full-overlap geometry
//! the row and column costs differ by the constant `N − C`, so minimizing one
//! minimizes the other.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_grads, ConvGeometry, Tensor4};

/// The `N×N×q×q` self-convolution of a kernel bank.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfConvResult {
    tensor: Tensor4,
    center: usize,
}

impl SelfConvResult {
    pub fn tensor(&self) -> &Tensor4 {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor4 {
        self.tensor
    }

    /// Index of the zero-shift slice, `P/S`.
    pub fn center(&self) -> usize {
        self.center
    }

    pub fn filters(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn shifts(&self) -> usize {
        self.tensor.dims()[2]
    }

    /// `‖self − I‖²_F` against the identity-at-centre target.
    pub fn residual_sq(&self) -> f64 {
        let target = identity_target(self.filters(), self.shifts());
        self.tensor
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// `N×N×q×q` tensor with the identity matrix in the centre slice and zeros elsewhere.
pub fn identity_target(n: usize, q: usize) -> Tensor4 {
    let c = q / 2;
    let mut t = Tensor4::zeros([n, n, q, q]);
    for i in 0..n {
        t.set([i, i, c, c], 1.0);
    }
    t
}

/// Self-convolution geometry covering every overlapping shift: `P = k − 1`.
pub fn full_overlap_geometry(kernel: usize, stride: usize) -> Result<ConvGeometry> {
    ConvGeometry::new(kernel.saturating_sub(1), stride)
}

fn check_self_conv(k: &Tensor4, g: ConvGeometry) -> Result<()> {
    let [_, _, kh, kw] = k.dims();
    if kh != kw {
        return Err(Error::geometry(format!(
            "self-convolution needs square kernels, got {kh}×{kw}"
        )));
    }
    // S | 2P alone gives an odd shift count but can skip the zero shift (P = 1, S = 2)
    if !g.padding.is_multiple_of(g.stride) {
        return Err(Error::geometry(format!(
            "padding ({}) must be divisible by stride ({}) for a centred self-convolution",
            g.padding, g.stride
        )));
    }
    Ok(())
}

/// `Conv(K, K, padding = P, stride = S)` with `K` acting as both input batch and filters.
pub fn self_conv(k: &Tensor4, g: ConvGeometry) -> Result<SelfConvResult> {
    check_self_conv(k, g)?;
    let tensor = conv2d(k, k, g)?;
    Ok(SelfConvResult {
        tensor,
        center: g.padding / g.stride,
    })
}

fn check_weight(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "regularizer weight must be finite and non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// `λ·‖self_conv(K, g) − I‖²_F`.
pub fn ortho_loss(k: &Tensor4, g: ConvGeometry, lambda: f64) -> Result<f64> {
    check_weight(lambda)?;
    Ok(lambda * self_conv(k, g)?.residual_sq())
}

/// `‖self_conv(K, g) − I‖_F`, the unweighted residual.
pub fn ortho_residual(k: &Tensor4, g: ConvGeometry) -> Result<f64> {
    Ok(self_conv(k, g)?.residual_sq().sqrt())
}

/// Loss and gradient in one pass.
///
/// The self-convolution is bilinear in `K`, so with `R = self_conv(K) − I` the
/// gradient is the sum of both conv adjoints applied to `2λR`.
pub fn ortho_loss_and_grad(k: &Tensor4, g: ConvGeometry, lambda: f64) -> Result<(f64, Tensor4)> {
    check_weight(lambda)?;
    let sc = self_conv(k, g)?;
    let target = identity_target(sc.filters(), sc.shifts());
    let mut residual = sc.into_tensor();
    for (r, t) in residual.data_mut().iter_mut().zip(target.data()) {
        *r -= t;
    }
    let loss = lambda * residual.norm_sq();
    let upstream = residual.scaled(2.0 * lambda);
    let (mut grad, as_filter) = conv2d_grads(k, k, g, &upstream)?;
    grad.add_assign(&as_filter);
    Ok((loss, grad))
}

pub fn ortho_loss_grad(k: &Tensor4, g: ConvGeometry, lambda: f64) -> Result<Tensor4> {
    Ok(ortho_loss_and_grad(k, g, lambda)?.1)
}

fn column_geometry(k: &Tensor4) -> Result<ConvGeometry> {
    full_overlap_geometry(k.dims()[2], 1)
}

/// `‖Conv(Kᵀ, Kᵀ, padding = k − 1, stride = 1) − I_c0‖²_F`.
pub fn column_ortho_loss(k: &Tensor4) -> Result<f64> {
    let g = column_geometry(k)?;
    ortho_loss(&k.swap_leading_axes(), g, 1.0)
}

pub fn column_ortho_loss_and_grad(k: &Tensor4, lambda: f64) -> Result<(f64, Tensor4)> {
    let g = column_geometry(k)?;
    let (loss, grad_t) = ortho_loss_and_grad(&k.swap_leading_axes(), g, lambda)?;
    Ok((loss, grad_t.swap_leading_axes()))
}

/// Which side of the lowering to orthogonalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrthoCase {
    Row,
    Column,
}

/// How a layer chooses its [`OrthoCase`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrthoMode {
    /// Row orthogonality when `N·H'·W' ≤ C·H·W`, column otherwise.
    #[default]
    Auto,
    Row,
    Column,
}

impl std::str::FromStr for OrthoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(OrthoMode::Auto),
            "row" => Ok(OrthoMode::Row),
            "column" | "col" => Ok(OrthoMode::Column),
            other => Err(Error::Config(format!("unknown ortho mode '{other}'"))),
        }
    }
}

/// Picks the orthogonality case for a layer with the given kernel, input
/// `(C, H, W)` and forward geometry.
pub fn select_case(
    kernel_dims: [usize; 4],
    input: (usize, usize, usize),
    g: ConvGeometry,
    mode: OrthoMode,
) -> Result<OrthoCase> {
    match mode {
        OrthoMode::Row => Ok(OrthoCase::Row),
        OrthoMode::Column => Ok(OrthoCase::Column),
        OrthoMode::Auto => {
            let [n, _, kh, kw] = kernel_dims;
            let (c, h, w) = input;
            let (ho, wo) = g.out_dims(h, w, kh, kw)?;
            if n * ho * wo <= c * h * w {
                Ok(OrthoCase::Row)
            } else {
                Ok(OrthoCase::Column)
            }
        }
    }
}

/// Regularizer for one layer: row case uses `P = k − 1` at the layer stride,
/// column case the transposed kernel at stride 1.
pub fn layer_ortho_loss_and_grad(
    k: &Tensor4,
    layer_stride: usize,
    case: OrthoCase,
    lambda: f64,
) -> Result<(f64, Tensor4)> {
    match case {
        OrthoCase::Row => {
            let g = full_overlap_geometry(k.dims()[2], layer_stride)?;
            ortho_loss_and_grad(k, g, lambda)
        }
        OrthoCase::Column => column_ortho_loss_and_grad(k, lambda),
    }
}

/// Row-minus-column cost gaps over a set of kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Gap {
    pub gaps: Vec<f64>,
    pub mean: f64,
    /// `max_i |gap_i − mean|`.
    pub max_deviation: f64,
}

/// Measures `row_cost(K_i) − column_cost(K_i)` for every sample; the gap is
/// constant in `K` for a fixed shape under full-overlap stride-1 geometry.
pub fn lemma1_gap(samples: &[Tensor4], g: ConvGeometry) -> Result<Lemma1Gap> {
    if samples.len() < 2 {
        return Err(Error::invalid("row/column gap needs at least 2 kernels"));
    }
    let dims = samples[0].dims();
    if samples.iter().any(|k| k.dims() != dims) {
        return Err(Error::geometry("row/column gap needs kernels of identical shape"));
    }
    let gaps = samples
        .iter()
        .map(|k| Ok(ortho_loss(k, g, 1.0)? - column_ortho_loss(k)?))
        .collect::<Result<Vec<_>>>()?;
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let max_deviation = gaps.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    Ok(Lemma1Gap {
        gaps,
        mean,
        max_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormal_bank(n: usize) -> Tensor4 {
        Tensor4::from_fn([n, n, 1, 1], |[a, b, _, _]| if a == b { 1.0 } else { 0.0 })
    }

    #[test]
    fn single_unit_filter() {
        let k = Tensor4::new([1, 1, 1, 1], vec![1.0]).unwrap();
        let sc = self_conv(&k, ConvGeometry::valid()).unwrap();
        assert_eq!(sc.tensor().data(), &[1.0]);
        assert_eq!(sc.residual_sq(), 0.0);
    }

    #[test]
    fn orthonormal_bank_hits_the_target() {
        let k = orthonormal_bank(4);
        let sc = self_conv(&k, ConvGeometry::valid()).unwrap();
        assert_eq!(sc.tensor(), &identity_target(4, 1));
        assert_eq!(ortho_loss(&k, ConvGeometry::valid(), 3.0).unwrap(), 0.0);
        let grad = ortho_loss_grad(&k, ConvGeometry::valid(), 3.0).unwrap();
        assert!(grad.data().iter().all(|&v| v == 0.0));
        assert_eq!(column_ortho_loss(&k).unwrap(), 0.0);
    }

    #[test]
    fn identity_target_has_n_ones() {
        let t = identity_target(5, 7);
        assert_eq!(t.data().iter().filter(|&&v| v != 0.0).count(), 5);
        assert_eq!(t.data().iter().sum::<f64>(), 5.0);
        assert_eq!(t.get([2, 2, 3, 3]), 1.0);
    }

    #[test]
    fn zero_weight_and_negative_weight() {
        let k = Tensor4::from_fn([2, 3, 3, 3], |[a, b, c, d]| (a + b * c + d) as f64 * 0.1);
        let g = full_overlap_geometry(3, 1).unwrap();
        assert_eq!(ortho_loss(&k, g, 0.0).unwrap(), 0.0);
        assert!(ortho_loss(&k, g, -1.0).is_err());
    }

    #[test]
    fn gradient_is_linear_in_weight() {
        let k = Tensor4::from_fn([2, 2, 3, 3], |[a, b, c, d]| ((a * 7 + b * 3 + c * 2 + d) as f64).sin());
        let g = full_overlap_geometry(3, 1).unwrap();
        let g1 = ortho_loss_grad(&k, g, 0.3).unwrap();
        let g2 = ortho_loss_grad(&k, g, 0.6).unwrap();
        assert!(g2.max_abs_diff(&g1.scaled(2.0)) < 1e-12);
    }

    #[test]
    fn zero_kernel_column_cost_is_channel_count() {
        let k = Tensor4::zeros([4, 3, 3, 3]);
        assert_eq!(column_ortho_loss(&k).unwrap(), 3.0);
    }

    #[test]
    fn self_conv_is_symmetric() {
        let k = Tensor4::from_fn([3, 2, 3, 3], |[a, b, c, d]| ((a * 13 + b * 5 + c * 3 + d) as f64).cos());
        let sc = self_conv(&k, ConvGeometry::new(2, 1).unwrap()).unwrap();
        let t = sc.tensor();
        let q = sc.shifts();
        for i in 0..3 {
            for j in 0..3 {
                for u in 0..q {
                    for v in 0..q {
                        let a = t.get([i, j, u, v]);
                        let b = t.get([j, i, q - 1 - u, q - 1 - v]);
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_uncentred_geometry() {
        let k = Tensor4::zeros([2, 2, 3, 3]);
        // 2P = 2 not divisible by 4
        assert!(self_conv(&k, ConvGeometry::new(1, 4).unwrap()).is_err());
        // shifts −1 and +1 only: no zero-shift slice
        assert!(self_conv(&k, ConvGeometry::new(1, 2).unwrap()).is_err());
    }

    #[test]
    fn square_one_by_one_gap_is_zero() {
        let a = Tensor4::from_fn([3, 3, 1, 1], |[i, j, _, _]| (i as f64 - j as f64 * 0.7).sin());
        let b = Tensor4::from_fn([3, 3, 1, 1], |[i, j, _, _]| (i as f64 * 1.3 + j as f64).cos());
        let gap = lemma1_gap(&[a, b], ConvGeometry::valid()).unwrap();
        for v in &gap.gaps {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn identical_kernels_have_no_deviation() {
        let a = Tensor4::from_fn([2, 1, 3, 3], |[i, _, c, d]| (i + c * d) as f64 * 0.2);
        let gap = lemma1_gap(&[a.clone(), a], full_overlap_geometry(3, 1).unwrap()).unwrap();
        assert_eq!(gap.max_deviation, 0.0);
        assert!(lemma1_gap(&[Tensor4::zeros([1, 1, 1, 1])], ConvGeometry::valid()).is_err());
        assert!(lemma1_gap(
            &[Tensor4::zeros([1, 1, 1, 1]), Tensor4::zeros([2, 1, 1, 1])],
            ConvGeometry::valid()
        )
        .is_err());
    }

    #[test]
    fn case_selection() {
        let g = ConvGeometry::new(1, 1).unwrap();
        // 64 filters over 3 channels: more rows than columns
        assert_eq!(
            select_case([64, 3, 3, 3], (3, 16, 16), g, OrthoMode::Auto).unwrap(),
            OrthoCase::Column
        );
        assert_eq!(
            select_case([64, 64, 3, 3], (64, 8, 8), g, OrthoMode::Auto).unwrap(),
            OrthoCase::Row
        );
        assert_eq!(
            select_case([64, 3, 3, 3], (3, 16, 16), g, OrthoMode::Row).unwrap(),
            OrthoCase::Row
        );
    }
}

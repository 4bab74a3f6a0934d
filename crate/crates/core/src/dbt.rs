//! Explicit doubly-block-Toeplitz lowering of a convolution and Toeplitz utilities.
//!
//! A convolution `Y = conv2d(X, K)` is the matrix product `y = M·x` once `X`
//! and `Y` are flattened channel-major then row-major
//! (`index = c·H·W + h·W + w`). [`DbtMatrix`] materializes `M` densely. It is
//! the ground-truth oracle for every structured operation in this crate and is
//! only meant for small shapes; the production path is [`crate::tensor::conv2d`].
//!
//! [`ToeplitzSpec`] stores a single Toeplitz matrix by its first column and
//! first row (`m + n − 1` numbers) and multiplies it against a vector through a
//! circulant embedding and the FFT.

use crate::error::{Error, Result};
use crate::fft::circular_convolve_fft;
use crate::tensor::{ConvGeometry, Tensor4};

/// Plain row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::geometry(format!(
                "matvec: matrix has {} columns, vector has {} entries",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// `A·Aᵀ`.
    pub fn gram_rows(&self) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in i..self.rows {
                let v: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }

    /// `Aᵀ·A`.
    pub fn gram_cols(&self) -> DenseMatrix {
        self.transpose().gram_rows()
    }

    /// `‖A − I‖²_F` for a square matrix.
    pub fn dist_to_identity_sq(&self) -> f64 {
        debug_assert_eq!(self.rows, self.cols);
        let mut acc = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                let d = self.get(r, c) - if r == c { 1.0 } else { 0.0 };
                acc += d * d;
            }
        }
        acc
    }
}

/// Flattens a `1×C×H×W` tensor to a length-`C·H·W` vector
/// (`index = c·H·W + h·W + w`).
pub fn flatten_input(x: &Tensor4) -> Result<Vec<f64>> {
    if x.dims()[0] != 1 {
        return Err(Error::geometry(format!(
            "flatten expects batch size 1, got {}",
            x.dims()[0]
        )));
    }
    Ok(x.data().to_vec())
}

/// Inverse of the flattening order for an `N×H'×W'` output.
pub fn unflatten_output(y: &[f64], n: usize, h: usize, w: usize) -> Result<Tensor4> {
    Tensor4::new([1, n, h, w], y.to_vec())
}

/// Dense `(N·H'·W') × (C·H·W)` lowering of a convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DbtMatrix {
    matrix: DenseMatrix,
    kernel_dims: [usize; 4],
    input_dims: (usize, usize, usize),
    output_hw: (usize, usize),
    geometry: ConvGeometry,
}

impl DbtMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.rows
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// Mutable access, used by fault-injection tests of the verification suite.
    pub fn matrix_mut(&mut self) -> &mut DenseMatrix {
        &mut self.matrix
    }

    pub fn kernel_dims(&self) -> [usize; 4] {
        self.kernel_dims
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        self.input_dims
    }

    pub fn output_hw(&self) -> (usize, usize) {
        self.output_hw
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geometry
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.matrix.get(r, c)
    }

    /// Row index of filter `n` at output position `(i, j)`.
    pub fn row_index(&self, n: usize, i: usize, j: usize) -> usize {
        let (ho, wo) = self.output_hw;
        (n * ho + i) * wo + j
    }

    /// Column index of input channel `c` at position `(h, w)`.
    pub fn col_index(&self, c: usize, h: usize, w: usize) -> usize {
        let (_, ih, iw) = self.input_dims;
        (c * ih + h) * iw + w
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matrix.matvec(x)
    }

    pub fn nnz_in_row(&self, r: usize) -> usize {
        self.matrix.row(r).iter().filter(|v| **v != 0.0).count()
    }
}

/// Builds the lowering `M` with `M·flatten(X) = flatten(conv2d(X, K, g))`.
///
/// Row `(n, i, j)` holds filter `n` placed at spatial offset `(iS − P, jS − P)`,
/// with taps that fall into the zero padding dropped.
pub fn build_dbt(k: &Tensor4, input: (usize, usize, usize), g: ConvGeometry) -> Result<DbtMatrix> {
    let [n, kc, kh, kw] = k.dims();
    let (c, h, w) = input;
    if kc != c {
        return Err(Error::geometry(format!(
            "kernel has {kc} channels but input has {c}"
        )));
    }
    let (ho, wo) = g.out_dims(h, w, kh, kw)?;
    let mut m = DenseMatrix::zeros(n * ho * wo, c * h * w);
    for ni in 0..n {
        for i in 0..ho {
            for j in 0..wo {
                let r = (ni * ho + i) * wo + j;
                for ci in 0..c {
                    for u in 0..kh {
                        let hh = (i * g.stride + u) as isize - g.padding as isize;
                        if hh < 0 || hh as usize >= h {
                            continue;
                        }
                        for v in 0..kw {
                            let ww = (j * g.stride + v) as isize - g.padding as isize;
                            if ww < 0 || ww as usize >= w {
                                continue;
                            }
                            let col = (ci * h + hh as usize) * w + ww as usize;
                            m.set(r, col, k.get([ni, ci, u, v]));
                        }
                    }
                }
            }
        }
    }
    Ok(DbtMatrix {
        matrix: m,
        kernel_dims: k.dims(),
        input_dims: input,
        output_hw: (ho, wo),
        geometry: g,
    })
}

/// An `m×n` Toeplitz matrix `T[i,j] = c[i−j]`, stored by its first column and first row.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzSpec {
    first_col: Vec<f64>,
    first_row: Vec<f64>,
}

impl ToeplitzSpec {
    pub fn new(first_col: Vec<f64>, first_row: Vec<f64>) -> Result<Self> {
        if first_col.is_empty() || first_row.is_empty() {
            return Err(Error::invalid("Toeplitz generators must be non-empty"));
        }
        if first_col[0] != first_row[0] {
            return Err(Error::invalid(format!(
                "Toeplitz generators disagree on the corner: {} vs {}",
                first_col[0], first_row[0]
            )));
        }
        Ok(Self {
            first_col,
            first_row,
        })
    }

    /// Symmetric Toeplitz matrix from its first column.
    pub fn symmetric(first_col: Vec<f64>) -> Result<Self> {
        let row = first_col.clone();
        Self::new(first_col, row)
    }

    pub fn identity(n: usize) -> Self {
        let mut c = vec![0.0; n.max(1)];
        c[0] = 1.0;
        Self {
            first_col: c.clone(),
            first_row: c,
        }
    }

    pub fn rows(&self) -> usize {
        self.first_col.len()
    }

    pub fn cols(&self) -> usize {
        self.first_row.len()
    }

    pub fn first_col(&self) -> &[f64] {
        &self.first_col
    }

    pub fn first_row(&self) -> &[f64] {
        &self.first_row
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= j {
            self.first_col[i - j]
        } else {
            self.first_row[j - i]
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows(), self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                d.set(i, j, self.get(i, j));
            }
        }
        d
    }

    /// O(m·n) product without materializing the matrix.
    pub fn dense_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols() {
            return Err(Error::geometry(format!(
                "Toeplitz matvec: {} columns, vector of length {}",
                self.cols(),
                x.len()
            )));
        }
        Ok((0..self.rows())
            .map(|i| x.iter().enumerate().map(|(j, xj)| self.get(i, j) * xj).sum())
            .collect())
    }
}

/// `T·x` through a circulant embedding of length `next_pow2(m + n − 1)`.
pub fn toeplitz_matvec_fast(t: &ToeplitzSpec, x: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (t.rows(), t.cols());
    if x.len() != n {
        return Err(Error::geometry(format!(
            "Toeplitz matvec: {n} columns, vector of length {}",
            x.len()
        )));
    }
    let len = (m + n - 1).next_power_of_two();
    let mut circ = vec![0.0; len];
    circ[..m].copy_from_slice(&t.first_col);
    for j in 1..n {
        circ[len - j] = t.first_row[j];
    }
    let mut padded = vec![0.0; len];
    padded[..n].copy_from_slice(x);
    let mut y = circular_convolve_fft(&circ, &padded)?;
    y.truncate(m);
    Ok(y)
}

/// Sample covariance of `samples` projected onto the symmetric Toeplitz
/// matrices in Frobenius norm. The projection replaces every diagonal with its
/// mean, so only the first column (n numbers) is kept.
pub fn toeplitz_covariance(samples: &[Vec<f64>]) -> Result<ToeplitzSpec> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "covariance needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples[0].len();
    if n == 0 || samples.iter().any(|s| s.len() != n) {
        return Err(Error::geometry("covariance samples must share a non-zero length"));
    }
    let count = samples.len() as f64;
    let mean: Vec<f64> = (0..n)
        .map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / count)
        .collect();
    let mut cov = DenseMatrix::zeros(n, n);
    for s in samples {
        for i in 0..n {
            let di = s[i] - mean[i];
            for j in 0..n {
                let v = cov.get(i, j) + di * (s[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    let denom = count - 1.0;
    let first_col = (0..n)
        .map(|d| {
            let diag: f64 = (0..n - d).map(|i| cov.get(i + d, i) + cov.get(i, i + d)).sum();
            diag / (2.0 * (n - d) as f64 * denom)
        })
        .collect();
    ToeplitzSpec::symmetric(first_col)
}

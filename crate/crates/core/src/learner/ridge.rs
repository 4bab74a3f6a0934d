//! Closed-form ridge-regression classifier fitted on support embeddings,
//! differentiable through the dual solve.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Fitted head: `W = Zᵀ(ZZᵀ + λI)⁻¹Y`, plus what backprop needs.
#[derive(Debug, Clone)]
pub struct RidgeHead {
    pub weights: DMatrix<f64>,
    alpha: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// Dual-form fit over `n` support rows of `z` with targets `y` (`n×c`).
pub fn ridge_head_fit(z: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<RidgeHead> {
    check_lambda(lambda)?;
    let n = z.nrows();
    if n == 0 || y.nrows() != n {
        return Err(Error::geometry(format!(
            "ridge fit needs matching non-empty rows, got {} and {}",
            n,
            y.nrows()
        )));
    }
    let mut a = z * z.transpose();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("ridge system is not positive definite".into()))?;
    let gram_inv = chol.inverse();
    let alpha = &gram_inv * y;
    let weights = z.transpose() * &alpha;
    Ok(RidgeHead {
        weights,
        alpha,
        gram_inv,
    })
}

/// Primal form `(ZᵀZ + λI_d)⁻¹ZᵀY`; reference for the dual solve.
pub fn ridge_primal(z: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    let d = z.ncols();
    let mut a = z.transpose() * z;
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric("ridge system is not positive definite".into()))?;
    Ok(chol.solve(&(z.transpose() * y)))
}

impl RidgeHead {
    /// Query logits `scale · Zq·W`.
    pub fn logits(&self, zq: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
        (zq * &self.weights) * scale
    }

    /// Backpropagates `∂L/∂logits` to the support and query embeddings.
    pub fn backward(
        &self,
        z: &DMatrix<f64>,
        zq: &DMatrix<f64>,
        d_logits: &DMatrix<f64>,
        scale: f64,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let g = d_logits * scale;
        let d_zq = &g * self.weights.transpose();
        let d_w = zq.transpose() * &g;
        // W = Zᵀα
        let mut d_z = &self.alpha * d_w.transpose();
        let d_alpha = z * &d_w;
        // α = A⁻¹Y with A = ZZᵀ + λI symmetric
        let d_a = -(&self.gram_inv * d_alpha) * self.alpha.transpose();
        d_z += (&d_a + d_a.transpose()) * z;
        (d_z, d_zq)
    }
}

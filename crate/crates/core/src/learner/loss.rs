//! Softmax cross-entropy with soft targets.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Per-row cross-entropy `Σ_i −y_i log p_i`.
pub fn cross_entropy_rows(logits: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Vec<f64>> {
    if logits.shape() != targets.shape() {
        return Err(Error::geometry(format!(
            "logits {:?} and targets {:?} differ in shape",
            logits.shape(),
            targets.shape()
        )));
    }
    Ok(logits
        .row_iter()
        .zip(targets.row_iter())
        .map(|(l, y)| {
            let top = l.iter().enumerate().fold(0, |b, (i, v)| if *v > l[b] { i } else { b });
            let m = l[top];
            // log-sum-exp relative to the max, kept separate so tiny losses survive
            let rest: f64 = l.iter().enumerate().filter(|(i, _)| *i != top).map(|(_, v)| (v - m).exp()).sum();
            let lse_rel = rest.ln_1p();
            l.iter().zip(y.iter()).map(|(li, yi)| yi * ((m - li) + lse_rel)).sum()
        })
        .collect())
}

/// Mean cross-entropy over rows and its gradient with respect to the logits.
pub fn soft_cross_entropy(logits: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let rows = cross_entropy_rows(logits, targets)?;
    let m = rows.len().max(1) as f64;
    let loss = rows.iter().sum::<f64>() / m;
    let p = softmax_rows(logits);
    let mut grad = DMatrix::zeros(logits.nrows(), logits.ncols());
    for r in 0..logits.nrows() {
        let mass: f64 = targets.row(r).sum();
        for c in 0..logits.ncols() {
            grad[(r, c)] = (mass * p[(r, c)] - targets[(r, c)]) / m;
        }
    }
    Ok((loss, grad))
}

/// Index of the largest entry in each row (lowest index on ties).
pub fn argmax_rows(m: &DMatrix<f64>) -> Vec<usize> {
    m.row_iter()
        .map(|r| {
            let mut best = 0;
            for (i, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_invariance() {
        let l = DMatrix::from_row_slice(2, 3, &[0.3, -1.2, 2.0, 5.0, 5.5, -3.0]);
        let y = DMatrix::from_row_slice(2, 3, &[0.0, 0.2, 0.8, 1.0, 0.0, 0.0]);
        let shifted = l.map(|v| v + 123.456);
        let (a, _) = soft_cross_entropy(&l, &y).unwrap();
        let (b, _) = soft_cross_entropy(&shifted, &y).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn confident_logits_approach_zero() {
        let y = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let l = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]) * 60.0;
        let (loss, _) = soft_cross_entropy(&l, &y).unwrap();
        assert!(loss > 0.0 && loss < 1e-20);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let l = DMatrix::from_row_slice(2, 3, &[0.3, -1.2, 2.0, 0.1, 0.5, -0.7]);
        let y = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.7, 0.5, 0.5, 0.0]);
        let (_, g) = soft_cross_entropy(&l, &y).unwrap();
        let h = 1e-6;
        for i in 0..l.len() {
            let (mut p, mut m) = (l.clone(), l.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (soft_cross_entropy(&p, &y).unwrap().0 - soft_cross_entropy(&m, &y).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn argmax_ties_and_scaling() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 3.0, 3.0, -1.0, -2.0, -0.5]);
        assert_eq!(argmax_rows(&m), vec![1, 2]);
        assert_eq!(argmax_rows(&(m * 7.5)), vec![1, 2]);
    }

    #[test]
    fn shape_mismatch() {
        assert!(cross_entropy_rows(&DMatrix::zeros(2, 3), &DMatrix::zeros(2, 2)).is_err());
    }
}

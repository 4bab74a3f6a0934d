//! FFT-based circular convolution, the primitive behind the fast Toeplitz matvec.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// `out[i] = Σ_j a[j]·b[(i−j) mod n]`, computed with two forward transforms
/// and one inverse transform of length `n`.
pub fn circular_convolve_fft(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("circular convolution of an empty vector"));
    }
    if a.len() != b.len() {
        return Err(Error::geometry(format!(
            "circular convolution needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let (fwd, inv) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    });
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    Ok(fa.iter().map(|c| c.re * scale).collect())
}

/// Reference O(n²) circular convolution.
pub fn circular_convolve_naive(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::invalid("circular convolution needs equal non-zero lengths"));
    }
    let n = a.len();
    Ok((0..n)
        .map(|i| (0..n).map(|j| a[j] * b[(i + n - j) % n]).sum())
        .collect())
}

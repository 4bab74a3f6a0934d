//! Capacity calculators: effective depth, a unit-constant VC-dimension
//! surrogate for piecewise-polynomial networks, and low-displacement-rank
//! storage / matvec accounting.

use crate::error::{Error, Result};

/// Layer-wise parameter and unit counts of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    /// `W_l`: parameters in layers `1..=l`, nondecreasing.
    pub cumulative_params: Vec<u64>,
    /// `n_l`: computation units in layer `l`.
    pub units: Vec<u64>,
    /// Pieces of the activation (2 for ReLU).
    pub pieces: u64,
    /// Polynomial degree of each activation piece (1 for ReLU).
    pub degree: u64,
    pub c1: f64,
    pub c2: f64,
}

impl NetSpec {
    pub fn new(cumulative_params: Vec<u64>, units: Vec<u64>) -> Result<Self> {
        let s = Self {
            cumulative_params,
            units,
            pieces: 2,
            degree: 1,
            c1: 1.0,
            c2: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Builds the cumulative counts from per-layer parameter counts.
    pub fn from_layer_params(per_layer: &[u64], units: Vec<u64>) -> Result<Self> {
        let cumulative = per_layer
            .iter()
            .scan(0u64, |acc, &w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Self::new(cumulative, units)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.cumulative_params.len();
        if l == 0 || self.units.len() != l {
            return Err(Error::invalid(format!(
                "need matching non-empty layer lists, got {} parameter and {} unit counts",
                l,
                self.units.len()
            )));
        }
        if self.cumulative_params.iter().chain(&self.units).any(|&v| v == 0) {
            return Err(Error::invalid("all parameter and unit counts must be at least 1"));
        }
        if self.cumulative_params.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("cumulative parameter counts must be nondecreasing"));
        }
        if self.pieces == 0 || self.degree == 0 {
            return Err(Error::invalid("activation pieces and degree must be at least 1"));
        }
        if !(self.c1 > 0.0 && self.c2 >= 0.0) {
            return Err(Error::invalid("c1 must be positive and c2 non-negative"));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.cumulative_params.len()
    }

    /// `W = W_L`.
    pub fn total_params(&self) -> u64 {
        *self.cumulative_params.last().expect("validated non-empty")
    }

    /// `U = Σ n_l`.
    pub fn total_units(&self) -> u64 {
        self.units.iter().sum()
    }
}

/// `L̄ = Σ_l W_l / W_L`; lies in `[1, L]`.
pub fn effective_depth(spec: &NetSpec) -> Result<f64> {
    spec.validate()?;
    let sum: f64 = spec.cumulative_params.iter().map(|&w| w as f64).sum();
    Ok(sum / spec.total_params() as f64)
}

/// Surrogate `B = L̄·W·log2(p·U) + L̄·L·W·log2(k)` with unit constants.
pub fn vc_bound(spec: &NetSpec) -> Result<f64> {
    let lbar = effective_depth(spec)?;
    let pu = spec.pieces as f64 * spec.total_units() as f64;
    if pu < 2.0 {
        return Err(Error::invalid(format!("p·U must be at least 2, got {pu}")));
    }
    let w = spec.total_params() as f64;
    let l = spec.depth() as f64;
    Ok(lbar * w * pu.log2() + lbar * l * w * (spec.degree as f64).log2())
}

/// Largest `m` with `m ≤ L + W̄·log2(2·c1·e·p·U^(2 + c2·k^L)·m / W̄)`,
/// `W̄ = Σ W_l`, found by fixed-point iteration.
pub fn vc_bound_implicit(spec: &NetSpec) -> Result<f64> {
    spec.validate()?;
    let l = spec.depth() as f64;
    let wbar: f64 = spec.cumulative_params.iter().map(|&w| w as f64).sum();
    let u = spec.total_units() as f64;
    let exponent = 2.0 + spec.c2 * (spec.degree as f64).powf(l);
    let log_const = (2.0 * spec.c1 * std::f64::consts::E * spec.pieces as f64).log2()
        + exponent * u.log2()
        - wbar.log2();
    let rhs = |m: f64| l + wbar * (log_const + m.log2());
    let mut m = wbar.max(2.0);
    for _ in 0..500 {
        let next = rhs(m);
        if !next.is_finite() || next <= 0.0 {
            return Err(Error::Numeric("implicit bound iteration left the positive reals".into()));
        }
        if (next - m).abs() <= 1e-12 * m {
            return Ok(next);
        }
        m = next;
    }
    Ok(m)
}

/// Effective depth, total units and the surrogate bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityReport {
    pub effective_depth: f64,
    pub total_units: u64,
    pub bound: f64,
    pub implicit_bound: f64,
}

pub fn capacity_report(spec: &NetSpec) -> Result<CapacityReport> {
    Ok(CapacityReport {
        effective_depth: effective_depth(spec)?,
        total_units: spec.total_units(),
        bound: vc_bound(spec)?,
        implicit_bound: vc_bound_implicit(spec)?,
    })
}

/// Storage and matvec cost of an `m×n` displacement-rank-`r` matrix versus dense.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdrBudget {
    /// `m·r + n·r`.
    pub params: u64,
    /// `m·n`.
    pub dense_params: u64,
    /// `m·r + n·r`.
    pub matvec_fast: u64,
    /// `n·r·log2(n)`.
    pub matvec_fft: f64,
    /// `dense_params / params`.
    pub ratio: f64,
}

pub fn ldr_budget(m: u64, n: u64, r: u64) -> Result<LdrBudget> {
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::invalid("m, n and r must be at least 1"));
    }
    let params = m * r + n * r;
    let dense_params = m * n;
    Ok(LdrBudget {
        params,
        dense_params,
        matvec_fast: params,
        matvec_fft: n as f64 * r as f64 * (n as f64).log2(),
        ratio: dense_params as f64 / params as f64,
    })
}

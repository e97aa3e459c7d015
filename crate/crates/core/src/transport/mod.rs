//! Quadratic Wasserstein distances: exact on the circle, entropic on
//! periodic grids, a linear-programming oracle, and bound checks.

pub mod checks;
pub mod circle;
pub mod lp;
pub mod sinkhorn;

pub use checks::{
    heat_flow_contraction_check, log_mean_fluctuation_check, w2_upper_surrogate, HeatFlowReport, LogMeanReport,
    Surrogate,
};
pub use circle::{
    w2_circle_exact, w2_circle_golden, w2_circle_quantiles, w2_circle_scan, w2_discrete_to_uniform, w2_to_uniform,
    CircleQuantile,
};
pub use lp::w2_lp_bruteforce;
pub use sinkhorn::{sinkhorn_divergence, SinkhornOptions, SinkhornResult};

use crate::error::{invalid, Error, Result};
use crate::spectral::wrap;

/// Geodesic distance on `ℝ/ℤ`.
#[inline]
pub fn circle_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).abs().rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Sorted, merged atoms on `[0, 1)` with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure1D {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure1D {
    /// Wraps, sorts and merges coincident atoms; weights must be positive
    /// and sum to one within `1e-12`.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(invalid(format!("{} atoms but {} weights", atoms.len(), weights.len())));
        }
        if atoms.is_empty() {
            return Err(Error::EmptySupport);
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(invalid(format!("non-positive atom weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized(total));
        }
        let mut pairs: Vec<(f64, f64)> = atoms.into_iter().map(wrap).zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::from_sorted_unchecked(pairs)
    }

    /// Atoms already sorted in `[0, 1)`; coincident atoms are merged.
    pub fn from_sorted_unchecked(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptySupport);
        }
        let mut atoms: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            if atoms.last() == Some(&x) {
                *weights.last_mut().expect("paired") += w;
            } else {
                atoms.push(x);
                weights.push(w);
            }
        }
        Ok(Self { atoms, weights })
    }

    pub fn dirac(x: f64) -> Self {
        Self { atoms: vec![wrap(x)], weights: vec![1.0] }
    }

    /// Equal weights on the given points.
    pub fn empirical(points: &[f64]) -> Result<Self> {
        let w = 1.0 / points.len() as f64;
        let mut pairs: Vec<(f64, f64)> = points.iter().map(|&x| (wrap(x), w)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self::from_sorted_unchecked(pairs)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Density with respect to Lebesgue measure on the `n^d` periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGridMeasure {
    dim: usize,
    n: usize,
    values: Vec<f64>,
}

impl PeriodicGridMeasure {
    /// Values in row-major order, last axis fastest.
    pub fn new(dim: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if n < 2 || values.len() != n.pow(dim as u32) {
            return Err(invalid(format!("{} grid values for n = {n}, d = {dim}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidDensity(format!("grid value {v}")));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        if (mean - 1.0).abs() > 1e-10 {
            return Err(Error::NotNormalized(mean));
        }
        Ok(Self { dim, n, values })
    }

    /// Samples `f` at `x = j/n` and renormalizes to unit mean.
    pub fn from_fn(dim: usize, n: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let total = n.pow(dim as u32);
        let mut x = vec![0.0; dim];
        let mut values = Vec::with_capacity(total);
        for p in 0..total {
            let mut q = p;
            for c in (0..dim).rev() {
                x[c] = (q % n) as f64 / n as f64;
                q /= n;
            }
            values.push(f(&x));
        }
        let mean = values.iter().sum::<f64>() / total as f64;
        values.iter_mut().for_each(|v| *v /= mean);
        Self::new(dim, n, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cell masses `f / n^d`.
    pub fn masses(&self) -> Vec<f64> {
        let c = 1.0 / self.values.len() as f64;
        self.values.iter().map(|v| v * c).collect()
    }

    /// Marginal cell masses along `axis`.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let n = self.n;
        let stride = n.pow((self.dim - 1 - axis) as u32);
        let mut out = vec![0.0; n];
        let c = 1.0 / self.values.len() as f64;
        for (p, v) in self.values.iter().enumerate() {
            out[(p / stride) % n] += v * c;
        }
        out
    }

    pub fn is_congruent(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n
    }
}

//! Transport bounds: the dual-Sobolev surrogate, heat-flow contraction on
//! the circle, and the logarithmic-mean fluctuation inequality.

use super::{w2_circle_exact, w2_circle_quantiles, CircleQuantile, DiscreteMeasure1D};
use crate::diffusion::EmpiricalModes;
use crate::error::{invalid, Error, Result};
use crate::special::log_mean_unchecked;
use serde::Serialize;
use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};

/// Cells used when a continuous measure on the circle is discretized.
pub const CELLS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Surrogate {
    /// `4 Σ λ⁻¹ e^{-2λr} a² / min f`.
    pub bound: f64,
    /// `∫ |∇(−L)⁻¹(f − 1)|² / M(f, 1) dμ` by grid quadrature.
    pub log_mean_bound: f64,
    pub sobolev: f64,
    pub min_density: f64,
}

/// Upper bounds on `W₂²(f_{t,r} μ, μ)` for one-dimensional models.
pub fn w2_upper_surrogate(modes: &EmpiricalModes, r: f64) -> Result<Surrogate> {
    let model = &modes.model;
    if model.dim() != 1 {
        return Err(invalid("the surrogate grid is one-dimensional"));
    }
    let density = modes.regularized(r)?;
    let list = model.modes()?;
    let mut sobolev = 0.0;
    let mut active = Vec::new();
    for (i, (m, a)) in list.iter().zip(&modes.coefficients).enumerate() {
        let w = (-m.eigenvalue * r).exp() * a;
        sobolev += w * w / m.eigenvalue;
        if w != 0.0 {
            active.push((i, w / m.eigenvalue));
        }
    }
    if sobolev == 0.0 {
        return Ok(Surrogate { bound: 0.0, log_mean_bound: 0.0, sobolev: 0.0, min_density: 1.0 });
    }
    let n = CELLS;
    let mut min_density = f64::INFINITY;
    let mut integral = 0.0;
    let mut total_weight = 0.0;
    for j in 0..n {
        let x = [(j as f64 + 0.5) / n as f64];
        let f = density.eval(&x)?;
        min_density = min_density.min(f);
        if f <= 0.0 {
            return Err(Error::NonPositiveDensity(f));
        }
        let mut grad = 0.0;
        for &(i, c) in &active {
            grad += c * model.eigenfunction_gradient(i, &x)?[0];
        }
        let weight = model.circle().map_or(1.0, |c| c.stationary_density(x[0]));
        integral += weight * grad * grad / log_mean_unchecked(f, 1.0);
        total_weight += weight;
    }
    Ok(Surrogate {
        bound: 4.0 * sobolev / min_density,
        log_mean_bound: integral / total_weight,
        sobolev,
        min_density,
    })
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Cell masses of `P_t^* ν` on the flat circle.
pub fn heat_smoothed_cells(a: &DiscreteMeasure1D, t: f64, cells: usize) -> Vec<f64> {
    let sigma = (2.0 * t).sqrt();
    let images = (8.0 * sigma).ceil() as i64 + 1;
    let h = 1.0 / cells as f64;
    let mut masses = vec![0.0; cells];
    let mut edges = vec![0.0; cells + 1];
    for (&x, &w) in a.atoms().iter().zip(a.weights()) {
        for (j, e) in edges.iter_mut().enumerate() {
            let y = j as f64 * h - x;
            *e = (-images..=images).map(|k| normal_cdf((y + k as f64) / sigma)).sum();
        }
        for j in 0..cells {
            masses[j] += w * (edges[j + 1] - edges[j]).max(0.0);
        }
    }
    let total: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|m| *m /= total);
    masses
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatFlowReport {
    pub times: Vec<f64>,
    /// `W₂²(P_t^* ν, ν)`.
    pub displacement: Vec<f64>,
    /// `max_t W₂²(P_t^* ν, ν) / t`.
    pub fitted_c: f64,
    /// `W₂(ν₀, ν₁)` before the flow, when a second measure is given.
    pub initial_distance: Option<f64>,
    /// `W₂(P_t^* ν₀, P_t^* ν₁)`.
    pub flowed_distance: Vec<f64>,
    pub displacement_ok: bool,
    pub contraction_ok: bool,
}

/// Heat-flow checks on the flat circle, where the curvature bound is `K = 0`:
/// `W₂²(P_t^* ν, ν) ≤ 2t` and `W₂(P_t^* ν₀, P_t^* ν₁)` is at most `W₂(ν₀, ν₁)`
/// and nonincreasing in `t`.
pub fn heat_flow_contraction_check(
    a: &DiscreteMeasure1D,
    other: Option<&DiscreteMeasure1D>,
    times: &[f64],
) -> Result<HeatFlowReport> {
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) {
        return Err(invalid("heat-flow times must be positive"));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = 1.0 / CELLS as f64;
    let qa = CircleQuantile::from_discrete(a);
    let mut displacement = Vec::with_capacity(sorted.len());
    for &t in &sorted {
        let cells = CircleQuantile::from_cell_masses(&heat_smoothed_cells(a, t, CELLS))?;
        displacement.push(w2_circle_quantiles(&cells, &qa));
    }
    let fitted_c = sorted.iter().zip(&displacement).map(|(t, w)| w / t).fold(0.0, f64::max);
    let displacement_ok = sorted.iter().zip(&displacement).all(|(t, w)| *w <= 2.0 * t + h * h);
    let (initial_distance, flowed_distance, contraction_ok) = match other {
        None => (None, Vec::new(), true),
        Some(b) => {
            let w0 = w2_circle_exact(a, b)?.sqrt();
            let mut flowed = Vec::with_capacity(sorted.len());
            for &t in &sorted {
                let ca = CircleQuantile::from_cell_masses(&heat_smoothed_cells(a, t, CELLS))?;
                let cb = CircleQuantile::from_cell_masses(&heat_smoothed_cells(b, t, CELLS))?;
                flowed.push(w2_circle_quantiles(&ca, &cb).sqrt());
            }
            let slack = 2.0 * h;
            let ok = flowed.iter().all(|w| *w <= w0 + slack)
                && flowed.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-9) + h * h);
            (Some(w0), flowed, ok)
        }
    };
    Ok(HeatFlowReport {
        times: sorted,
        displacement,
        fitted_c,
        initial_distance,
        flowed_distance,
        displacement_ok,
        contraction_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogMeanReport {
    pub q: Vec<f64>,
    /// One fitted constant per `q`.
    pub fitted_c: Vec<f64>,
    pub cases: usize,
    pub passed: bool,
}

/// Largest constant accepted in the logarithmic-mean fluctuation fit.
pub const LOG_MEAN_C_MAX: f64 = 10.0;

/// `‖M((1−ϱ)f + ϱ, 1)⁻¹ − 1‖_q ≤ c log(1/ϱ) ‖f − 1‖₂^{2/(q∨2)}` for
/// `f = 1 + δ cos(2πx)` on a uniform grid, one `c` per `q`.
pub fn log_mean_fluctuation_check(deltas: &[f64], rhos: &[f64], qs: &[f64], grid: usize) -> Result<LogMeanReport> {
    if deltas.iter().any(|d| !(*d > 0.0 && *d <= 0.5)) || rhos.iter().any(|r| !(*r > 0.0 && *r < 0.5)) {
        return Err(invalid("need δ ∈ (0, ½] and ϱ ∈ (0, ½)"));
    }
    let mut fitted = vec![0.0f64; qs.len()];
    for &delta in deltas {
        let values: Vec<f64> = (0..grid)
            .map(|j| 1.0 + delta * (2.0 * PI * (j as f64 + 0.5) / grid as f64).cos())
            .collect();
        let l2 = (values.iter().map(|f| (f - 1.0).powi(2)).sum::<f64>() / grid as f64).sqrt();
        for &rho in rhos {
            for (k, &q) in qs.iter().enumerate() {
                let lhs = (values
                    .iter()
                    .map(|f| (1.0 / log_mean_unchecked((1.0 - rho) * f + rho, 1.0) - 1.0).abs().powf(q))
                    .sum::<f64>()
                    / grid as f64)
                    .powf(1.0 / q);
                let rhs = (1.0 / rho).ln() * l2.powf(2.0 / q.max(2.0));
                fitted[k] = fitted[k].max(lhs / rhs);
            }
        }
    }
    let passed = fitted.iter().all(|c| c.is_finite() && *c <= LOG_MEAN_C_MAX);
    Ok(LogMeanReport { q: qs.to_vec(), fitted_c: fitted, cases: deltas.len() * rhos.len(), passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{ModelKind, SpectralModel, FOUR_PI_SQ};
    use std::sync::Arc;

    #[test]
    fn surrogate_examples() {
        let model = Arc::new(SpectralModel::enumerate(ModelKind::torus(1), FOUR_PI_SQ * 100.0).unwrap());
        let n = model.modes().unwrap().len();
        let zero = EmpiricalModes::synthetic(model.clone(), vec![0.0; n]).unwrap();
        assert_eq!(w2_upper_surrogate(&zero, 0.05).unwrap().bound, 0.0);
        let mut c = vec![0.0; n];
        c[0] = 0.3;
        c[3] = -0.1;
        let one = EmpiricalModes::synthetic(model.clone(), c.clone()).unwrap();
        let small = EmpiricalModes::synthetic(model.clone(), c.iter().map(|v| 0.1 * v).collect()).unwrap();
        let s1 = w2_upper_surrogate(&one, 0.01).unwrap();
        let s2 = w2_upper_surrogate(&small, 0.01).unwrap();
        assert!((s2.sobolev / s1.sobolev - 0.01).abs() < 1e-12);
        assert!(s1.log_mean_bound <= s1.bound);
        // exact transport of the regularized density lies below both bounds
        let f = one.regularized(0.01).unwrap();
        let q = CircleQuantile::from_cell_masses(&f.cell_masses(CELLS).unwrap()).unwrap();
        let w = crate::transport::w2_to_uniform(&q);
        assert!(w <= s1.log_mean_bound && w <= s1.bound, "{w} {s1:?}");
        let mut big = vec![0.0; n];
        big[0] = 1.2;
        let neg = EmpiricalModes::synthetic(model, big).unwrap();
        assert!(matches!(w2_upper_surrogate(&neg, 1e-4), Err(Error::NonPositiveDensity(_))));
    }

    #[test]
    fn heat_flow_examples() {
        let d0 = DiscreteMeasure1D::dirac(0.0);
        let rep = heat_flow_contraction_check(&d0, None, &[0.01]).unwrap();
        assert!((rep.displacement[0] / 0.02 - 1.0).abs() < 0.1, "{rep:?}");
        assert!(rep.displacement_ok);
        let same = heat_flow_contraction_check(&d0, Some(&d0), &[0.01, 0.05]).unwrap();
        assert!(same.initial_distance.unwrap() == 0.0 && same.flowed_distance.iter().all(|w| *w < 1e-6));
        let dh = DiscreteMeasure1D::dirac(0.5);
        let pair = heat_flow_contraction_check(&d0, Some(&dh), &[0.01, 0.05, 0.2]).unwrap();
        assert!(pair.contraction_ok, "{pair:?}");
        assert!(pair.flowed_distance.iter().all(|w| *w <= 0.5 + 1e-6));
    }

    #[test]
    fn log_mean_inequality_holds() {
        let rep = log_mean_fluctuation_check(&[0.05, 0.1, 0.25, 0.5], &[0.01, 0.1, 0.4], &[1.0, 2.0, 4.0], 2048).unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}

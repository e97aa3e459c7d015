//! Log-domain Sinkhorn iterations on periodic grids with separable
//! squared-geodesic cost.

use super::{circle_distance, PeriodicGridMeasure};
use crate::error::{invalid, Error, Result};
use serde::Serialize;

/// Smallest accepted regularization.
pub const MIN_EPSILON: f64 = 1e-4;
/// Largest per-axis `c_max / ε` handled with a precomputed linear kernel.
pub const LINEAR_KERNEL_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkhornOptions {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Marginal violation target in `L¹`.
    pub tol: f64,
    /// Geometric ε-schedule from `0.1` down to the target.
    pub schedule: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { epsilon: 1e-3, max_iter: 20_000, tol: 1e-8, schedule: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinkhornResult {
    pub divergence: f64,
    pub ot_ab: f64,
    pub ot_aa: f64,
    pub ot_bb: f64,
    pub iterations: usize,
    pub violation: f64,
}

struct AxisKernel {
    n: usize,
    /// `C(i, j) / ε` per axis.
    scaled: Vec<f64>,
    /// `exp(-C(i, j) / ε)` when the linear path is safe.
    linear: Option<Vec<f64>>,
}

impl AxisKernel {
    fn new(n: usize, eps: f64) -> Self {
        let mut scaled = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                scaled[i * n + j] = circle_distance(i as f64 / n as f64, j as f64 / n as f64).powi(2) / eps;
            }
        }
        let cmax = scaled.iter().cloned().fold(0.0, f64::max);
        let linear = (cmax <= LINEAR_KERNEL_LIMIT).then(|| scaled.iter().map(|c| (-c).exp()).collect());
        Self { n, scaled, linear }
    }

    /// `out_i = log Σ_j exp(v_j − C_ij/ε)` for one fiber.
    fn apply(&self, v: &[f64], out: &mut [f64], buf: &mut [f64]) {
        let n = self.n;
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            out.iter_mut().for_each(|o| *o = f64::NEG_INFINITY);
            return;
        }
        match &self.linear {
            Some(k) => {
                for (b, &x) in buf.iter_mut().zip(v) {
                    *b = (x - m).exp();
                }
                for i in 0..n {
                    let row = &k[i * n..(i + 1) * n];
                    let s: f64 = row.iter().zip(buf.iter()).map(|(a, b)| a * b).sum();
                    out[i] = m + s.ln();
                }
            }
            None => {
                for i in 0..n {
                    let row = &self.scaled[i * n..(i + 1) * n];
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..n {
                        mx = mx.max(v[j] - row[j]);
                    }
                    let s: f64 = (0..n).map(|j| (v[j] - row[j] - mx).exp()).sum();
                    out[i] = mx + s.ln();
                }
            }
        }
    }
}

struct Solver {
    dim: usize,
    n: usize,
    kernel: AxisKernel,
    eps: f64,
    fiber_in: Vec<f64>,
    fiber_out: Vec<f64>,
    buf: Vec<f64>,
    work: Vec<f64>,
}

impl Solver {
    fn new(dim: usize, n: usize, eps: f64) -> Self {
        Self {
            dim,
            n,
            kernel: AxisKernel::new(n, eps),
            eps,
            fiber_in: vec![0.0; n],
            fiber_out: vec![0.0; n],
            buf: vec![0.0; n],
            work: vec![0.0; n.pow(dim as u32)],
        }
    }

    /// In place: `h_i ← log Σ_j exp(h_j − C_ij/ε)` with `C` summed over axes.
    fn convolve(&mut self, h: &mut [f64]) {
        let n = self.n;
        let total = h.len();
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let block = stride * n;
            for start in (0..total).step_by(block) {
                for off in 0..stride {
                    let base = start + off;
                    for k in 0..n {
                        self.fiber_in[k] = h[base + k * stride];
                    }
                    self.kernel.apply(&self.fiber_in, &mut self.fiber_out, &mut self.buf);
                    for k in 0..n {
                        h[base + k * stride] = self.fiber_out[k];
                    }
                }
            }
        }
    }

    /// `target ← −ε log Σ_j exp((other_j − C_ij)/ε) b_j`; returns the previous
    /// potential's marginal violation `Σ_i a_i |1 − exp((f_i − f_new_i)/ε)|`.
    fn update(&mut self, target: &mut [f64], other: &[f64], log_w_other: &[f64], w_target: &[f64]) -> f64 {
        let mut work = std::mem::take(&mut self.work);
        for ((h, &g), &lb) in work.iter_mut().zip(other).zip(log_w_other) {
            *h = g / self.eps + lb;
        }
        self.convolve(&mut work);
        let mut violation = 0.0;
        for ((f, &h), &a) in target.iter_mut().zip(work.iter()).zip(w_target) {
            let new = -self.eps * h;
            if a > 0.0 {
                violation += a * (1.0 - ((*f - new) / self.eps).exp()).abs();
            }
            *f = new;
        }
        self.work = work;
        violation
    }
}

fn entropic_ot(
    a: &[f64],
    b: &[f64],
    dim: usize,
    n: usize,
    opts: &SinkhornOptions,
) -> Result<(f64, usize, f64)> {
    let la: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; a.len()];
    let mut g = vec![0.0; b.len()];
    let mut schedule = Vec::new();
    if opts.schedule {
        let mut e = 0.1f64;
        while e > opts.epsilon * 1.000_001 {
            schedule.push(e);
            e *= 0.5;
        }
    }
    schedule.push(opts.epsilon);
    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    let last = schedule.len() - 1;
    for (stage, &eps) in schedule.iter().enumerate() {
        let mut solver = Solver::new(dim, n, eps);
        let stage_tol = if stage == last { opts.tol } else { (opts.tol * 100.0).max(1e-5) };
        loop {
            if iterations >= opts.max_iter {
                return Err(Error::NotConverged { iterations, violation });
            }
            violation = solver.update(&mut f, &g, &lb, a);
            solver.update(&mut g, &f, &la, b);
            iterations += 1;
            if violation < stage_tol {
                break;
            }
        }
    }
    let value = a.iter().zip(&f).filter(|(w, _)| **w > 0.0).map(|(w, v)| w * v).sum::<f64>()
        + b.iter().zip(&g).filter(|(w, _)| **w > 0.0).map(|(w, v)| w * v).sum::<f64>();
    Ok((value, iterations, violation))
}

/// Debiased divergence `OT_ε(a,b) − ½OT_ε(a,a) − ½OT_ε(b,b)`.
pub fn sinkhorn_divergence(
    a: &PeriodicGridMeasure,
    b: &PeriodicGridMeasure,
    opts: &SinkhornOptions,
) -> Result<SinkhornResult> {
    if !a.is_congruent(b) {
        return Err(invalid("Sinkhorn grids are not congruent"));
    }
    if !(opts.epsilon >= MIN_EPSILON) {
        return Err(Error::KernelUnderflow(opts.epsilon));
    }
    let (dim, n) = (a.dim(), a.resolution());
    let (ma, mb) = (a.masses(), b.masses());
    let (ot_ab, i1, v1) = entropic_ot(&ma, &mb, dim, n, opts)?;
    let (ot_aa, i2, v2) = entropic_ot(&ma, &ma, dim, n, opts)?;
    let (ot_bb, i3, v3) = entropic_ot(&mb, &mb, dim, n, opts)?;
    Ok(SinkhornResult {
        divergence: ot_ab - 0.5 * ot_aa - 0.5 * ot_bb,
        ot_ab,
        ot_aa,
        ot_bb,
        iterations: i1 + i2 + i3,
        violation: v1.max(v2).max(v3),
    })
}

/// `OT_ε(a, b)` alone.
pub fn entropic_cost(a: &PeriodicGridMeasure, b: &PeriodicGridMeasure, opts: &SinkhornOptions) -> Result<f64> {
    if !a.is_congruent(b) {
        return Err(invalid("Sinkhorn grids are not congruent"));
    }
    if !(opts.epsilon >= MIN_EPSILON) {
        return Err(Error::KernelUnderflow(opts.epsilon));
    }
    Ok(entropic_ot(&a.masses(), &b.masses(), a.dim(), a.resolution(), opts)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{w2_circle_exact, DiscreteMeasure1D};
    use std::f64::consts::PI;

    fn bump(delta: f64) -> impl Fn(&[f64]) -> f64 {
        move |x: &[f64]| 1.0 + delta * (2.0 * PI * x[0]).cos()
    }

    #[test]
    fn identical_inputs_give_zero() {
        let a = PeriodicGridMeasure::from_fn(2, 32, bump(0.3)).unwrap();
        let r = sinkhorn_divergence(&a, &a, &SinkhornOptions { epsilon: 1e-2, ..Default::default() }).unwrap();
        assert!(r.divergence.abs() < 1e-8, "{r:?}");
    }

    #[test]
    fn guards() {
        let a = PeriodicGridMeasure::from_fn(2, 8, |_| 1.0).unwrap();
        let b = PeriodicGridMeasure::from_fn(2, 16, |_| 1.0).unwrap();
        assert!(sinkhorn_divergence(&a, &b, &SinkhornOptions::default()).is_err());
        let tiny = SinkhornOptions { epsilon: 5e-5, ..Default::default() };
        assert!(matches!(sinkhorn_divergence(&a, &a, &tiny), Err(Error::KernelUnderflow(_))));
        let starved = SinkhornOptions { epsilon: 1e-3, max_iter: 2, tol: 1e-14, schedule: false };
        let c = PeriodicGridMeasure::from_fn(2, 8, bump(0.5)).unwrap();
        assert!(matches!(sinkhorn_divergence(&a, &c, &starved), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn entropic_cost_decreases_with_epsilon() {
        let a = PeriodicGridMeasure::from_fn(2, 32, |_| 1.0).unwrap();
        let b = PeriodicGridMeasure::from_fn(2, 32, bump(0.5)).unwrap();
        let vals: Vec<f64> = [1e-2, 3e-3, 1e-3]
            .iter()
            .map(|&e| entropic_cost(&a, &b, &SinkhornOptions { epsilon: e, ..Default::default() }).unwrap())
            .collect();
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2], "{vals:?}");
    }

    #[test]
    fn axis_reduction_matches_exact() {
        let n = 64;
        let a = PeriodicGridMeasure::from_fn(2, n, |_| 1.0).unwrap();
        let b = PeriodicGridMeasure::from_fn(2, n, bump(0.5)).unwrap();
        let r = sinkhorn_divergence(&a, &b, &SinkhornOptions::default()).unwrap();
        let grid: Vec<f64> = (0..n).map(|j| j as f64 / n as f64).collect();
        let exact = w2_circle_exact(
            &DiscreteMeasure1D::new(grid.clone(), a.marginal(0)).unwrap(),
            &DiscreteMeasure1D::new(grid, b.marginal(0)).unwrap(),
        )
        .unwrap();
        assert!((r.divergence / exact - 1.0).abs() < 0.05, "{} vs {exact}", r.divergence);
    }
}

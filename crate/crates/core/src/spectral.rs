//! Spectral data of the model manifolds: flat unit tori `(ℝ/ℤ)^d` and a
//! circle carrying the weighted measure `e^V dx / Z`.

use crate::error::{invalid, Error, Result};
use crate::quadrature::{self, integrate, integrate_to_infinity, Tolerance};
use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::gamma;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

pub const FOUR_PI_SQ: f64 = 4.0 * PI * PI;

/// Largest mode list that is ever materialized.
pub const MODE_CAP: u64 = 5_000_000;

/// Absolute tolerance of the truncation certificate behind spectral sums.
pub const TAIL_TOL: f64 = 1e-12;

/// Nonzero integer wave vector.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct WaveVector(Vec<i64>);

impl WaveVector {
    pub fn new(components: Vec<i64>) -> Result<Self> {
        if components.is_empty() || components.len() > 4 {
            return Err(Error::UnsupportedDimension(components.len()));
        }
        if components.iter().all(|&c| c == 0) {
            return Err(invalid("wave vector must be nonzero"));
        }
        Ok(Self(components))
    }

    pub fn components(&self) -> &[i64] {
        &self.0
    }

    pub fn norm_sq(&self) -> u64 {
        self.0.iter().map(|&c| (c * c) as u64).sum()
    }

    pub fn eigenvalue(&self) -> f64 {
        FOUR_PI_SQ * self.norm_sq() as f64
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum()
    }
}

impl fmt::Display for WaveVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "{}", parts.join(";"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum Parity {
    Cos,
    Sin,
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parity::Cos => "cos",
            Parity::Sin => "sin",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModeShape {
    Fourier { wave: WaveVector, parity: Parity },
    /// Column of the weighted-circle grid basis.
    Grid { column: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMode {
    /// One-based position in the sorted mode list.
    pub index: usize,
    pub eigenvalue: f64,
    pub shape: ModeShape,
}

/// Potential `V` on the circle with its derivative.
#[derive(Clone)]
pub struct Potential {
    name: String,
    value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    derivative: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential").field("name", &self.name).finish()
    }
}

impl Potential {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), value: Arc::new(value), derivative: Arc::new(derivative) }
    }

    pub fn zero() -> Self {
        Self::new("zero", |_| 0.0, |_| 0.0)
    }

    /// `V(x) = a cos(2πx)`.
    pub fn cosine(amplitude: f64) -> Self {
        Self::new(
            format!("cos:{amplitude}"),
            move |x| amplitude * (2.0 * PI * x).cos(),
            move |x| -2.0 * PI * amplitude * (2.0 * PI * x).sin(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    FlatTorus { dim: usize },
    WeightedCircle { potential: Potential, grid: usize },
}

impl ModelKind {
    pub fn torus(dim: usize) -> Self {
        ModelKind::FlatTorus { dim }
    }

    pub fn circle(potential: Potential, grid: usize) -> Self {
        ModelKind::WeightedCircle { potential, grid }
    }

    /// Parses `torus1`..`torus4` or `circle:<amplitude>[:<grid>]`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("torus") {
            let dim: usize = rest.trim_start_matches(':').parse().map_err(|_| {
                Error::Config(format!("bad torus dimension in model '{s}'"))
            })?;
            return Ok(Self::torus(dim));
        }
        if let Some(rest) = s.strip_prefix("circle") {
            let mut parts = rest.trim_start_matches(':').split(':');
            let amp = match parts.next() {
                Some("") | None => 0.0,
                Some(a) => a.parse().map_err(|_| Error::Config(format!("bad amplitude in '{s}'")))?,
            };
            let grid = match parts.next() {
                Some(g) => g.parse().map_err(|_| Error::Config(format!("bad grid in '{s}'")))?,
                None => 512,
            };
            return Ok(Self::circle(Potential::cosine(amp), grid));
        }
        Err(Error::Config(format!("unknown model '{s}'")))
    }

    pub fn label(&self) -> String {
        match self {
            ModelKind::FlatTorus { dim } => format!("torus{dim}"),
            ModelKind::WeightedCircle { potential, .. } => format!("circle[{}]", potential.name()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelKind::FlatTorus { dim } => *dim,
            ModelKind::WeightedCircle { .. } => 1,
        }
    }
}

/// Eigenvalue multiplicity bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shell {
    pub eigenvalue: f64,
    pub multiplicity: u64,
    /// `|k|²` on tori, position in the grid spectrum on the circle.
    pub key: u64,
}

/// Grid eigenbasis of the weighted circle.
#[derive(Debug, Clone)]
pub struct CircleBasis {
    pub potential: Potential,
    pub nodes: usize,
    /// Discrete probability weights of μ at the grid nodes.
    pub weights: Vec<f64>,
    /// Normalizing constant `Z = ∫ e^V dx`.
    pub normalizer: f64,
    /// `φ_i` at the nodes, one vector per retained mode.
    pub vectors: Vec<Vec<f64>>,
    /// All nontrivial grid eigenvalues, ascending.
    pub spectrum: Vec<f64>,
    /// Largest `|S - Sᵀ|` entry of the symmetrized generator.
    pub symmetry_defect: f64,
    /// `sup |V''/2 + V'²/4|` on the grid.
    pub schrodinger_bound: f64,
}

impl CircleBasis {
    pub fn node(&self, j: usize) -> f64 {
        j as f64 / self.nodes as f64
    }

    fn interpolate(&self, v: &[f64], x: f64) -> f64 {
        let n = self.nodes;
        let s = wrap(x) * n as f64;
        let j = (s.floor() as usize).min(n - 1);
        let f = s - j as f64;
        v[j] * (1.0 - f) + v[(j + 1) % n] * f
    }

    fn slope(&self, v: &[f64], x: f64) -> f64 {
        let n = self.nodes;
        let j = ((wrap(x) * n as f64).floor() as usize).min(n - 1);
        (v[(j + 1) % n] - v[j]) * n as f64
    }

    /// Density of μ with respect to Lebesgue measure.
    pub fn stationary_density(&self, x: f64) -> f64 {
        self.potential.value(x).exp() / self.normalizer
    }
}

/// Immutable spectral data of a model up to an eigenvalue cutoff.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    kind: ModelKind,
    dim: usize,
    lambda_max: f64,
    shells: Vec<Shell>,
    modes: Option<Vec<SpectralMode>>,
    circle: Option<CircleBasis>,
    mode_count: u64,
}

impl SpectralModel {
    /// All modes with `λ ≤ lambda_max`, sorted by eigenvalue, wave vector, parity.
    pub fn enumerate(kind: ModelKind, lambda_max: f64) -> Result<Self> {
        match &kind {
            ModelKind::FlatTorus { dim } => Self::torus(*dim, lambda_max),
            ModelKind::WeightedCircle { potential, grid } => {
                Self::weighted_circle(potential.clone(), *grid, lambda_max)
            }
        }
    }

    fn torus(dim: usize, lambda_max: f64) -> Result<Self> {
        if !(1..=4).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if !(lambda_max >= FOUR_PI_SQ) {
            return Err(Error::CutoffBelowGap { cutoff: lambda_max, gap: FOUR_PI_SQ });
        }
        let n_max = (lambda_max / FOUR_PI_SQ).floor() as usize;
        if n_max > 50_000_000 {
            return Err(invalid(format!("cutoff {lambda_max} needs a shell table beyond 5e7")));
        }
        let counts = sum_of_squares_counts(dim, n_max);
        let shells: Vec<Shell> = counts
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &c)| c > 0)
            .map(|(n, &c)| Shell { eigenvalue: FOUR_PI_SQ * n as f64, multiplicity: c, key: n as u64 })
            .collect();
        let mode_count: u64 = shells.iter().map(|s| s.multiplicity).sum();
        let modes = if mode_count <= MODE_CAP { Some(torus_modes(dim, n_max)) } else { None };
        Ok(Self {
            kind: ModelKind::FlatTorus { dim },
            dim,
            lambda_max,
            shells,
            modes,
            circle: None,
            mode_count,
        })
    }

    fn weighted_circle(potential: Potential, n: usize, lambda_max: f64) -> Result<Self> {
        if n < 256 {
            return Err(invalid(format!("weighted circle grid needs n >= 256, got {n}")));
        }
        let v0 = potential.value(0.0);
        let v1 = potential.value(1.0);
        if !v0.is_finite() || (v0 - v1).abs() > 1e-9 * (1.0 + v0.abs()) {
            return Err(Error::NonPeriodicPotential { start: v0, end: v1 });
        }
        let h = 1.0 / n as f64;
        let v: Vec<f64> = (0..n).map(|j| potential.value(j as f64 * h)).collect();
        let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // π_j = e^{V_j - max V}; the shift cancels in every ratio
        let pi: Vec<f64> = v.iter().map(|vj| (vj - vmax).exp()).collect();
        let pi_sum: f64 = pi.iter().sum();
        let weights: Vec<f64> = pi.iter().map(|p| p / pi_sum).collect();
        let normalizer = pi_sum * h * vmax.exp();

        // generator L with edge weights sqrt(π_j π_{j+1}), self-adjoint in ℓ²(π)
        let h2 = h * h;
        let mut gen = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let jp = (j + 1) % n;
            let jm = (j + n - 1) % n;
            let wp = (pi[j] * pi[jp]).sqrt();
            let wm = (pi[j] * pi[jm]).sqrt();
            gen[(j, jp)] += wp / (h2 * pi[j]);
            gen[(j, jm)] += wm / (h2 * pi[j]);
            gen[(j, j)] -= (wp + wm) / (h2 * pi[j]);
        }
        // S = Π^{1/2} L Π^{-1/2}
        let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
        let mut sym = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if gen[(i, j)] != 0.0 {
                    sym[(i, j)] = -sq[i] * gen[(i, j)] / sq[j];
                }
            }
        }
        let mut defect = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                defect = defect.max((sym[(i, j)] - sym[(j, i)]).abs());
            }
        }
        let sym = (&sym + sym.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let spectrum: Vec<f64> = order[1..].iter().map(|&c| eig.eigenvalues[c]).collect();
        if !(lambda_max >= spectrum[0]) {
            return Err(Error::CutoffBelowGap { cutoff: lambda_max, gap: spectrum[0] });
        }
        let scale: Vec<f64> = pi.iter().map(|p| (pi_sum / p).sqrt()).collect();
        let mut vectors = Vec::new();
        let mut modes = Vec::new();
        let mut shells = Vec::new();
        for (pos, &c) in order[1..].iter().enumerate() {
            let lambda = eig.eigenvalues[c];
            if lambda > lambda_max {
                break;
            }
            let col = eig.eigenvectors.column(c);
            let mut phi: Vec<f64> = (0..n).map(|j| col[j] * scale[j]).collect();
            let norm: f64 = phi.iter().zip(&weights).map(|(p, w)| w * p * p).sum::<f64>().sqrt();
            // fixed sign convention: first sizable entry positive
            let pivot = phi.iter().find(|p| p.abs() > 1e-8).copied().unwrap_or(1.0);
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for p in phi.iter_mut() {
                *p *= sign / norm;
            }
            let column = vectors.len();
            vectors.push(phi);
            modes.push(SpectralMode {
                index: column + 1,
                eigenvalue: lambda,
                shape: ModeShape::Grid { column },
            });
            shells.push(Shell { eigenvalue: lambda, multiplicity: 1, key: pos as u64 + 1 });
        }
        let schrodinger_bound = (0..n)
            .map(|j| {
                let x = j as f64 * h;
                let dv = potential.derivative(x);
                let ddv = (potential.derivative(x + 1e-5) - potential.derivative(x - 1e-5)) / 2e-5;
                (0.5 * ddv + 0.25 * dv * dv).abs()
            })
            .fold(0.0, f64::max);
        let mode_count = modes.len() as u64;
        Ok(Self {
            kind: ModelKind::WeightedCircle { potential: potential.clone(), grid: n },
            dim: 1,
            lambda_max,
            shells,
            modes: Some(modes),
            circle: Some(CircleBasis {
                potential,
                nodes: n,
                weights,
                normalizer,
                vectors,
                spectrum,
                symmetry_defect: defect,
                schrodinger_bound,
            }),
            mode_count,
        })
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.kind, ModelKind::FlatTorus { .. })
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn lambda1(&self) -> f64 {
        self.shells[0].eigenvalue
    }

    /// Smallest admissible horizon `2 max(1, 1/λ_1)`.
    pub fn horizon_floor(&self) -> f64 {
        crate::special::horizon_floor(self.lambda1())
    }

    pub fn shells(&self) -> &[Shell] {
        &self.shells
    }

    pub fn mode_count(&self) -> u64 {
        self.mode_count
    }

    pub fn circle(&self) -> Option<&CircleBasis> {
        self.circle.as_ref()
    }

    pub fn modes(&self) -> Result<&[SpectralMode]> {
        match &self.modes {
            Some(m) => Ok(m),
            None => Err(Error::TooManyModes { count: self.mode_count, cap: MODE_CAP }),
        }
    }

    pub fn mode(&self, i: usize) -> Result<&SpectralMode> {
        let modes = self.modes()?;
        modes.get(i).ok_or(Error::ModeIndex { index: i, count: modes.len() })
    }

    /// `φ_i(x)` for the mode at zero-based position `i`.
    pub fn eigenfunction(&self, i: usize, x: &[f64]) -> Result<f64> {
        let mode = self.mode(i)?;
        self.check_point(x)?;
        Ok(self.eval_shape(&mode.shape, x))
    }

    pub(crate) fn eval_shape(&self, shape: &ModeShape, x: &[f64]) -> f64 {
        match shape {
            ModeShape::Fourier { wave, parity } => {
                let phase = 2.0 * PI * wave.dot(x);
                match parity {
                    Parity::Cos => SQRT_2 * phase.cos(),
                    Parity::Sin => SQRT_2 * phase.sin(),
                }
            }
            ModeShape::Grid { column } => {
                let c = self.circle.as_ref().expect("grid mode without basis");
                c.interpolate(&c.vectors[*column], x[0])
            }
        }
    }

    /// Gradient of `φ_i` at `x`.
    pub fn eigenfunction_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        let mode = self.mode(i)?;
        self.check_point(x)?;
        Ok(match &mode.shape {
            ModeShape::Fourier { wave, parity } => {
                let phase = 2.0 * PI * wave.dot(x);
                let f = match parity {
                    Parity::Cos => -SQRT_2 * phase.sin(),
                    Parity::Sin => SQRT_2 * phase.cos(),
                };
                wave.components().iter().map(|&k| 2.0 * PI * k as f64 * f).collect()
            }
            ModeShape::Grid { column } => {
                let c = self.circle.as_ref().expect("grid mode without basis");
                vec![c.slope(&c.vectors[*column], x[0])]
            }
        })
    }

    /// `sup |φ_i|²` (2 on tori, grid maximum on the circle).
    pub fn sup_sq(&self, i: usize) -> Result<f64> {
        let mode = self.mode(i)?;
        Ok(match &mode.shape {
            ModeShape::Fourier { .. } => 2.0,
            ModeShape::Grid { column } => {
                let c = self.circle.as_ref().expect("grid mode without basis");
                c.vectors[*column].iter().map(|v| v * v).fold(0.0, f64::max)
            }
        })
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(invalid(format!("point has {} coordinates, model has {}", x.len(), self.dim)));
        }
        Ok(())
    }

    /// Transition density with respect to μ.
    pub fn heat_kernel(&self, t: f64, x: &[f64], y: &[f64], method: KernelMethod) -> Result<f64> {
        if !(t > 0.0) {
            return Err(invalid(format!("heat kernel needs t > 0, got {t}")));
        }
        self.check_point(x)?;
        self.check_point(y)?;
        match method {
            KernelMethod::Wrapped => {
                if !self.is_torus() {
                    return Err(Error::TorusOnly("wrapped heat kernel"));
                }
                Ok(x.iter().zip(y).map(|(a, b)| wrapped_gaussian(t, a - b)).product())
            }
            KernelMethod::Spectral => {
                let modes = self.modes()?;
                let mut s = 1.0;
                for m in modes {
                    let w = (-m.eigenvalue * t).exp();
                    if w == 0.0 {
                        break;
                    }
                    s += w * self.eval_shape(&m.shape, x) * self.eval_shape(&m.shape, y);
                }
                Ok(s)
            }
        }
    }

    /// Upper bound on `Σ_{λ > Λ_max} λ^{-θ} e^{-rλ} (ln λ)^j sup|φ|²`.
    pub fn tail_bound(&self, theta: f64, r: f64, log_power: u32) -> f64 {
        let (dim, shift, sup) = match &self.circle {
            None => (self.dim, 0.0, 1.0),
            Some(c) => {
                let sup = (0..c.vectors.len())
                    .map(|i| c.vectors[i].iter().map(|v| v * v).fold(0.0, f64::max))
                    .fold(2.0, f64::max);
                (1, c.schrodinger_bound, sup)
            }
        };
        let lam = (self.lambda_max - shift).max(FOUR_PI_SQ * 0.25);
        sup * counting_tail_bound(dim, lam, theta, r, log_power)
    }

    fn certify(&self, theta: f64, r: f64, log_power: u32) -> Result<()> {
        let tail = self.tail_bound(theta, r, log_power);
        if !(tail <= TAIL_TOL) {
            return Err(Error::InsufficientCutoff { cutoff: self.lambda_max, tail, tol: TAIL_TOL });
        }
        Ok(())
    }

    /// `h_r^{(θ)}(x) = Σ λ_i^{-θ} e^{-λ_i r} φ_i(x)²`, or its μ-mean.
    pub fn spectral_sum_h(&self, theta: f64, r: f64, at: SumPoint<'_>) -> Result<f64> {
        if !(r > 0.0) || !(theta >= 0.0) {
            return Err(invalid(format!("need r > 0 and theta >= 0, got r = {r}, theta = {theta}")));
        }
        self.certify(theta, r, 0)?;
        let weight = |lambda: f64| lambda.powf(-theta) * (-lambda * r).exp();
        self.weighted_sum(weight, at)
    }

    /// `g_r^{(θ)} = Σ ln(λ_i) λ_i^{-θ} e^{-λ_i r}`.
    pub fn spectral_sum_g(&self, theta: f64, r: f64) -> Result<f64> {
        if !(r > 0.0) || !(theta > 0.0) {
            return Err(invalid(format!("need r > 0 and theta > 0, got r = {r}, theta = {theta}")));
        }
        self.certify(theta, r, 1)?;
        self.weighted_sum(|l: f64| l.ln() * l.powf(-theta) * (-l * r).exp(), SumPoint::Mean)
    }

    /// `Σ_i w(λ_i)` over the enumerated spectrum, pointwise with `φ_i(x)²` if requested.
    pub fn weighted_sum(&self, w: impl Fn(f64) -> f64, at: SumPoint<'_>) -> Result<f64> {
        match at {
            SumPoint::Point(x) if !self.is_torus() => {
                self.check_point(x)?;
                let modes = self.modes()?;
                Ok(modes
                    .iter()
                    .map(|m| {
                        let p = self.eval_shape(&m.shape, x);
                        w(m.eigenvalue) * p * p
                    })
                    .sum())
            }
            SumPoint::Point(x) => {
                // cos² + sin² = 2 per wave vector: pointwise equals the mean
                self.check_point(x)?;
                Ok(self.shell_sum(w))
            }
            SumPoint::Mean => Ok(self.shell_sum(w)),
        }
    }

    fn shell_sum(&self, w: impl Fn(f64) -> f64) -> f64 {
        // ascending order accumulates the small terms last, but the shells
        // are summed from the top to limit rounding
        self.shells.iter().rev().map(|s| s.multiplicity as f64 * w(s.eigenvalue)).sum()
    }

    /// `(4πs)^{d/2} Σ_i e^{-sλ_i}` through the theta function.
    pub fn trace_asymptotic_ratio(&self, s: f64) -> Result<f64> {
        if !self.is_torus() {
            return Err(Error::TorusOnly("trace asymptotic ratio"));
        }
        torus_trace_ratio(self.dim, s)
    }
}

/// Where a spectral sum is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum SumPoint<'a> {
    Mean,
    Point(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMethod {
    Spectral,
    Wrapped,
}

impl std::str::FromStr for KernelMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "wrapped" => Ok(Self::Wrapped),
            _ => Err(invalid(format!("unknown heat kernel method '{s}'"))),
        }
    }
}

/// Wraps a coordinate into `[0, 1)`.
#[inline]
pub fn wrap(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// One-dimensional periodic Gaussian kernel with variance `2t`.
pub fn wrapped_gaussian(t: f64, delta: f64) -> f64 {
    let d = wrap(delta + 0.5) - 0.5;
    let m = ((4.0 * t * 40.0).sqrt()).ceil() as i64 + 1;
    let norm = (4.0 * PI * t).sqrt();
    let mut s = 0.0;
    for k in -m..=m {
        let z = d + k as f64;
        s += (-(z * z) / (4.0 * t)).exp();
    }
    s / norm
}

/// `r_d(n)` for `n ≤ n_max`: lattice points of `ℤ^d` on the sphere `|k|² = n`.
pub fn sum_of_squares_counts(dim: usize, n_max: usize) -> Vec<u64> {
    let mut one = vec![0u64; n_max + 1];
    one[0] = 1;
    let mut j = 1usize;
    while j * j <= n_max {
        one[j * j] = 2;
        j += 1;
    }
    let mut acc = one.clone();
    for _ in 1..dim {
        let mut next = vec![0u64; n_max + 1];
        for (n, slot) in next.iter_mut().enumerate() {
            let mut s = 0u64;
            let mut j = 0usize;
            while j * j <= n {
                s += one[j * j] * acc[n - j * j];
                j += 1;
            }
            *slot = s;
        }
        acc = next;
    }
    acc
}

fn torus_modes(dim: usize, n_max: usize) -> Vec<SpectralMode> {
    let k_max = (n_max as f64).sqrt().floor() as i64;
    let mut waves: Vec<(u64, WaveVector)> = Vec::new();
    let mut k = vec![-k_max; dim];
    loop {
        let first_nonzero = k.iter().find(|&&c| c != 0);
        if let Some(&c) = first_nonzero {
            let n: u64 = k.iter().map(|&c| (c * c) as u64).sum();
            if c > 0 && n as usize <= n_max {
                waves.push((n, WaveVector(k.clone())));
            }
        }
        let mut axis = dim;
        loop {
            if axis == 0 {
                waves.sort();
                let mut modes = Vec::with_capacity(2 * waves.len());
                for (n, w) in waves {
                    for parity in [Parity::Cos, Parity::Sin] {
                        modes.push(SpectralMode {
                            index: modes.len() + 1,
                            eigenvalue: FOUR_PI_SQ * n as f64,
                            shape: ModeShape::Fourier { wave: w.clone(), parity },
                        });
                    }
                }
                return modes;
            }
            axis -= 1;
            if k[axis] < k_max {
                k[axis] += 1;
                break;
            }
            k[axis] = -k_max;
        }
    }
}

fn ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        4 => PI * PI / 2.0,
        _ => PI.powf(dim as f64 / 2.0) / gamma(dim as f64 / 2.0 + 1.0),
    }
}

/// Upper bound on the number of torus modes with eigenvalue at most `λ`.
pub fn counting_upper(dim: usize, lambda: f64) -> f64 {
    let radius = lambda.max(0.0).sqrt() / (2.0 * PI);
    ball_volume(dim) * (radius + (dim as f64).sqrt() / 2.0).powi(dim as i32)
}

/// `∫_Λ^∞ N_up(λ) (-f'(λ)) dλ` for `f = λ^{-θ} e^{-rλ} (ln λ)^j`, which bounds
/// `Σ_{λ_i > Λ} f(λ_i)` by Abel summation whenever `f` decreases beyond `Λ`.
pub fn counting_tail_bound(dim: usize, lambda: f64, theta: f64, r: f64, log_power: u32) -> f64 {
    let j = log_power as f64;
    let f = |l: f64| l.powf(-theta) * (-r * l).exp() * l.ln().powf(j);
    let dneg = |l: f64| f(l) * (theta / l + r - j / (l * l.ln()));
    if dneg(lambda) < 0.0 {
        return f64::INFINITY;
    }
    let growth = dim as f64 / 2.0 - theta;
    if r == 0.0 && growth >= 0.0 {
        return f64::INFINITY;
    }
    let scale = 1.0 / (r + (theta + 1.0) / lambda);
    let g = |w: f64| {
        let l = lambda + scale * w;
        counting_upper(dim, l) * dneg(l) * scale
    };
    integrate_to_infinity(g, 0.0, Tolerance::new(1e-30, 1e-8)).value
}

/// Smallest torus cutoff whose tail bound for `λ^{-θ}e^{-rλ}(ln λ)^j` is below `tol`.
pub fn required_cutoff(dim: usize, theta: f64, r: f64, log_power: u32, tol: f64) -> Result<f64> {
    if !(r > 0.0) && !(theta > dim as f64 / 2.0 + 0.5) {
        return Err(invalid("a cutoff certificate needs r > 0 or fast polynomial decay"));
    }
    let mut hi = FOUR_PI_SQ * 2.0;
    while counting_tail_bound(dim, hi, theta, r, log_power) > tol {
        hi *= 2.0;
        if hi > FOUR_PI_SQ * 4e7 {
            return Err(Error::InsufficientCutoff { cutoff: hi, tail: f64::INFINITY, tol });
        }
    }
    let mut lo = hi / 2.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if counting_tail_bound(dim, mid, theta, r, log_power) > tol {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `θ_1(s) - 1 = Σ_{k≠0} e^{-4π²k²s}`, by Poisson duality for small `s`.
pub fn theta_minus_one(s: f64) -> f64 {
    if s < 1.0 / (4.0 * PI) {
        let mut sum = 1.0;
        let mut m = 1.0f64;
        loop {
            let term = 2.0 * (-(m * m) / (4.0 * s)).exp();
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
            m += 1.0;
        }
        sum / (4.0 * PI * s).sqrt() - 1.0
    } else {
        let mut sum = 0.0;
        let mut k = 1.0f64;
        loop {
            let term = 2.0 * (-FOUR_PI_SQ * k * k * s).exp();
            sum += term;
            if term <= 1e-18 * sum || term == 0.0 {
                break;
            }
            k += 1.0;
        }
        sum
    }
}

/// Torus trace `Σ_i e^{-sλ_i} = θ_1(s)^d - 1`, without cancellation at large `s`.
pub fn torus_trace(dim: usize, s: f64) -> f64 {
    let e = theta_minus_one(s);
    (dim as f64 * e.ln_1p()).exp_m1()
}

pub fn torus_trace_ratio(dim: usize, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(invalid(format!("trace ratio needs s > 0, got {s}")));
    }
    Ok((4.0 * PI * s).powf(dim as f64 / 2.0) * torus_trace(dim, s))
}

/// `h̄_r^{(θ)} = Γ(θ)^{-1} ∫_0^∞ (θ_1(s+r)^d - 1) s^{θ-1} ds` on `(ℝ/ℤ)^d`.
///
/// Certificate-free route for `r ≥ 0`; at `r = 0` the sum converges iff `θ > d/2`.
pub fn torus_hbar_mellin(dim: usize, theta: f64, r: f64) -> Result<f64> {
    if !(theta > 0.0) || !(r >= 0.0) {
        return Err(invalid(format!("need theta > 0, r >= 0, got {theta}, {r}")));
    }
    let half = dim as f64 / 2.0;
    if r == 0.0 && theta <= half {
        return Err(invalid(format!("sum of λ^-{theta} diverges on a {dim}-torus")));
    }
    let tol = Tolerance { abs: 1e-300, rel: 1e-13, max_intervals: 1000 };
    let upper = 2.0 + 10.0 * theta / FOUR_PI_SQ;
    let integrand = |s: f64| torus_trace(dim, s + r) * s.powf(theta - 1.0);
    let mut total = 0.0;
    let start;
    if r == 0.0 {
        // below ε the dual series is a single term to within e^{-1/(4ε)}
        let eps = 1e-3f64;
        total += (4.0 * PI).powf(-half) * eps.powf(theta - half) / (theta - half)
            - eps.powf(theta) / theta;
        start = eps;
    } else {
        let head_end = r.min(upper);
        total += if theta < 1.0 {
            let inv = 1.0 / theta;
            integrate(|w: f64| torus_trace(dim, w.powf(inv) + r) * inv, 0.0, head_end.powf(theta), tol)
                .value
        } else {
            integrate(integrand, 0.0, head_end, tol).value
        };
        start = head_end;
    }
    if start < upper {
        let pts = quadrature::geometric_points(start, upper, 4);
        total += quadrature::integrate_panels(integrand, &pts, tol).value;
    }
    Ok(total / gamma(theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(d: usize, lmax: f64) -> SpectralModel {
        SpectralModel::enumerate(ModelKind::torus(d), lmax).unwrap()
    }

    #[test]
    fn torus1_enumeration() {
        let m = torus(1, FOUR_PI_SQ * 9.0 + 1.0);
        let ev: Vec<f64> = m.modes().unwrap().iter().map(|m| m.eigenvalue / FOUR_PI_SQ).collect();
        assert_eq!(ev, vec![1.0, 1.0, 4.0, 4.0, 9.0, 9.0]);
        let first = &m.modes().unwrap()[0];
        assert_eq!(
            first.shape,
            ModeShape::Fourier { wave: WaveVector(vec![1]), parity: Parity::Cos }
        );
    }

    #[test]
    fn torus2_enumeration_matches_brute_force() {
        // brute force over the cube; one representative per ±k pair
        let mut reps = 0;
        for a in -2i64..=2 {
            for b in -2i64..=2 {
                let n = a * a + b * b;
                let first = if a != 0 { a } else { b };
                if n >= 1 && n <= 2 && first > 0 {
                    reps += 1;
                }
            }
        }
        let m = torus(2, FOUR_PI_SQ * 2.0 + 1.0);
        assert_eq!(m.modes().unwrap().len(), 2 * reps);
        assert_eq!(m.modes().unwrap().len(), 8);
        let keys: Vec<String> = m
            .modes()
            .unwrap()
            .iter()
            .map(|m| match &m.shape {
                ModeShape::Fourier { wave, parity } => format!("{wave}{parity}"),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(
            keys,
            ["0;1cos", "0;1sin", "1;0cos", "1;0sin", "1;-1cos", "1;-1sin", "1;1cos", "1;1sin"]
        );
    }

    #[test]
    fn enumeration_errors() {
        assert!(matches!(
            SpectralModel::enumerate(ModelKind::torus(1), 10.0),
            Err(Error::CutoffBelowGap { .. })
        ));
        assert!(matches!(
            SpectralModel::enumerate(ModelKind::torus(5), 100.0),
            Err(Error::UnsupportedDimension(5))
        ));
        let bad = Potential::new("ramp", |x| x, |_| 1.0);
        assert!(matches!(
            SpectralModel::enumerate(ModelKind::circle(bad, 256), 100.0),
            Err(Error::NonPeriodicPotential { .. })
        ));
    }

    #[test]
    fn shell_counts_match_jacobi_four_squares() {
        let r4 = sum_of_squares_counts(4, 200);
        for n in 1..=200usize {
            let jacobi: u64 = (1..=n).filter(|d| n % d == 0 && d % 4 != 0).map(|d| 8 * d as u64).sum();
            assert_eq!(r4[n], jacobi, "n = {n}");
        }
    }

    #[test]
    fn flat_weighted_circle_matches_torus() {
        let m = SpectralModel::enumerate(ModelKind::circle(Potential::zero(), 512), 200.0).unwrap();
        let ev: Vec<f64> = m.modes().unwrap().iter().map(|m| m.eigenvalue).collect();
        assert_eq!(ev.len(), 4);
        for (i, e) in ev.iter().enumerate() {
            let exact = FOUR_PI_SQ * ((i / 2 + 1) as f64).powi(2);
            assert!((e / exact - 1.0).abs() < 1e-4, "{e} vs {exact}");
        }
    }

    #[test]
    fn eigenfunction_examples() {
        let m = torus(2, FOUR_PI_SQ * 2.0 + 1.0);
        let t1 = torus(1, FOUR_PI_SQ * 4.0);
        assert!((t1.eigenfunction(0, &[0.0]).unwrap() - SQRT_2).abs() < 1e-15);
        assert!((t1.eigenfunction(1, &[0.25]).unwrap() - SQRT_2).abs() < 1e-15);
        // (1,1) cos is at position 6
        assert!((m.eigenfunction(6, &[0.5, 0.5]).unwrap() - SQRT_2).abs() < 1e-14);
        assert!(matches!(t1.eigenfunction(99, &[0.0]), Err(Error::ModeIndex { .. })));
    }

    fn gram_defect(m: &SpectralModel, grid: usize) -> f64 {
        let modes = m.modes().unwrap();
        let d = m.dim();
        let pts = grid.pow(d as u32);
        let mut worst = 0.0f64;
        let values: Vec<Vec<f64>> = (0..modes.len())
            .map(|i| {
                (0..pts)
                    .map(|p| {
                        let mut x = vec![0.0; d];
                        let mut q = p;
                        for c in x.iter_mut() {
                            *c = (q % grid) as f64 / grid as f64;
                            q /= grid;
                        }
                        m.eigenfunction(i, &x).unwrap()
                    })
                    .collect()
            })
            .collect();
        for i in 0..modes.len() {
            for j in 0..=i {
                let g: f64 =
                    values[i].iter().zip(&values[j]).map(|(a, b)| a * b).sum::<f64>() / pts as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    #[test]
    fn torus_orthonormality() {
        assert!(gram_defect(&torus(1, FOUR_PI_SQ * 30.0), 64) < 1e-12);
        assert!(gram_defect(&torus(2, FOUR_PI_SQ * 8.0), 16) < 1e-12);
        assert!(gram_defect(&torus(3, FOUR_PI_SQ * 3.0), 8) < 1e-12);
    }

    #[test]
    fn weighted_circle_orthonormal_and_symmetric() {
        let m = SpectralModel::enumerate(ModelKind::circle(Potential::cosine(0.8), 256), 4000.0)
            .unwrap();
        let c = m.circle().unwrap();
        assert!(c.symmetry_defect < 1e-10 * (c.nodes as f64).powi(2));
        let modes = m.modes().unwrap();
        for i in 0..modes.len() {
            for j in 0..=i {
                let g: f64 = (0..c.nodes)
                    .map(|k| c.weights[k] * c.vectors[i][k] * c.vectors[j][k])
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((g - target).abs() < 1e-10, "({i},{j}) {g}");
            }
        }
        let total: f64 = c.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn heat_kernel_methods_agree() {
        let m = torus(1, FOUR_PI_SQ * 100.0);
        let a = m.heat_kernel(0.02, &[0.0], &[0.0], KernelMethod::Spectral).unwrap();
        let b = m.heat_kernel(0.02, &[0.0], &[0.0], KernelMethod::Wrapped).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        let far = m.heat_kernel(50.0, &[0.1], &[0.7], KernelMethod::Spectral).unwrap();
        assert!((far - 1.0).abs() < 1e-12);
        let anti = m.heat_kernel(0.01, &[0.0], &[0.5], KernelMethod::Wrapped).unwrap();
        assert!(anti > 0.0 && anti < 1.0);
        let m2 = torus(2, FOUR_PI_SQ * 60.0);
        for &(t, x, y) in &[(0.03, [0.1, 0.2], [0.4, 0.9]), (0.2, [0.0, 0.0], [0.5, 0.5])] {
            let a = m2.heat_kernel(t, &x, &y, KernelMethod::Spectral).unwrap();
            let b = m2.heat_kernel(t, &x, &y, KernelMethod::Wrapped).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let circ = SpectralModel::enumerate(ModelKind::circle(Potential::zero(), 256), 100.0).unwrap();
        assert!(matches!(
            circ.heat_kernel(0.1, &[0.0], &[0.0], KernelMethod::Wrapped),
            Err(Error::TorusOnly(_))
        ));
        assert!(m.heat_kernel(0.0, &[0.0], &[0.0], KernelMethod::Wrapped).is_err());
    }

    #[test]
    fn chapman_kolmogorov() {
        let m = torus(1, FOUR_PI_SQ * 400.0);
        let n = 256;
        for &(t, s, x, y) in &[(0.01, 0.02, 0.1, 0.35), (0.05, 0.005, 0.9, 0.2)] {
            let conv: f64 = (0..n)
                .map(|j| {
                    let z = j as f64 / n as f64;
                    m.heat_kernel(t, &[x], &[z], KernelMethod::Wrapped).unwrap()
                        * m.heat_kernel(s, &[z], &[y], KernelMethod::Wrapped).unwrap()
                })
                .sum::<f64>()
                / n as f64;
            let direct = m.heat_kernel(t + s, &[x], &[y], KernelMethod::Spectral).unwrap();
            assert!((conv - direct).abs() < 1e-6, "{conv} vs {direct}");
            assert!(direct > 0.0);
        }
    }

    #[test]
    fn inverse_square_sum_is_one_over_720() {
        let m = torus(1, FOUR_PI_SQ * 1e6);
        let s = m.weighted_sum(|l| l.powi(-2), SumPoint::Mean).unwrap();
        assert!((s - 1.0 / 720.0).abs() < 1e-12, "{s}");
        let mellin = torus_hbar_mellin(1, 2.0, 0.0).unwrap();
        assert!((mellin / (1.0 / 720.0) - 1.0).abs() < 1e-11, "{mellin}");
        // two dimensions: Σ|k|^{-4} = 4 ζ(2) β(2)
        let catalan = 0.915_965_594_177_219_015;
        let z2 = 4.0 * PI * PI / 6.0 * catalan / FOUR_PI_SQ.powi(2);
        let m2 = torus_hbar_mellin(2, 2.0, 0.0).unwrap();
        assert!((m2 / z2 - 1.0).abs() < 1e-11, "{m2} vs {z2}");
    }

    #[test]
    fn spectral_sum_h_examples() {
        let lmax = required_cutoff(4, 0.0, 1e-4, 0, TAIL_TOL).unwrap();
        let m4 = torus(4, lmax);
        let h = m4.spectral_sum_h(0.0, 1e-4, SumPoint::Mean).unwrap();
        let lead = (4.0 * PI * 1e-4f64).powi(-2) - 1.0;
        assert!((h / lead - 1.0).abs() < 0.02);
        assert!((h / torus_trace(4, 1e-4) - 1.0).abs() < 1e-10);

        let lmax = required_cutoff(2, 0.5, 0.01, 0, TAIL_TOL).unwrap();
        let m2 = torus(2, lmax);
        let mean = m2.spectral_sum_h(0.5, 0.01, SumPoint::Mean).unwrap();
        for x in [[0.0, 0.0], [0.3, 0.77]] {
            let p = m2.spectral_sum_h(0.5, 0.01, SumPoint::Point(&x)).unwrap();
            assert!((p - mean).abs() <= 1e-12 * mean);
        }
        // the explicit mode list gives the same pointwise value
        let explicit: f64 = m2
            .modes()
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, md)| {
                let p = m2.eigenfunction(i, &[0.3, 0.77]).unwrap();
                md.eigenvalue.powf(-0.5) * (-md.eigenvalue * 0.01).exp() * p * p
            })
            .sum();
        assert!((explicit / mean - 1.0).abs() < 1e-12);

        let small = torus(1, FOUR_PI_SQ * 4.0);
        assert!(matches!(
            small.spectral_sum_h(0.0, 1e-3, SumPoint::Mean),
            Err(Error::InsufficientCutoff { .. })
        ));
        assert!(small.spectral_sum_h(0.0, 0.0, SumPoint::Mean).is_err());
    }

    #[test]
    fn certificate_is_an_upper_bound() {
        let big = torus(2, FOUR_PI_SQ * 4000.0);
        for &(theta, r) in &[(0.0, 1e-2), (1.0, 3e-3), (2.0, 1e-3)] {
            for &cut in &[50.0, 200.0, 800.0] {
                let actual: f64 = big
                    .shells()
                    .iter()
                    .filter(|s| s.key as f64 > cut)
                    .map(|s| s.multiplicity as f64 * s.eigenvalue.powf(-theta) * (-s.eigenvalue * r).exp())
                    .sum();
                let bound = counting_tail_bound(2, FOUR_PI_SQ * cut, theta, r, 0);
                assert!(bound >= actual, "theta {theta} r {r} cut {cut}: {bound} < {actual}");
            }
        }
    }

    #[test]
    fn spectral_sum_g_examples() {
        let lmax = required_cutoff(1, 1.0, 0.5, 1, TAIL_TOL).unwrap();
        let m = torus(1, lmax.max(FOUR_PI_SQ * 10.0));
        assert!(m.spectral_sum_g(1.0, 1.0).unwrap() > 0.0);
        let eps = 1e-5;
        let g = m.spectral_sum_g(2.0, 0.5).unwrap();
        let fd = -(m.spectral_sum_h(2.0 + eps, 0.5, SumPoint::Mean).unwrap()
            - m.spectral_sum_h(2.0 - eps, 0.5, SumPoint::Mean).unwrap())
            / (2.0 * eps);
        assert!((g / fd - 1.0).abs() < 1e-6, "{g} vs {fd}");
        assert!(m.spectral_sum_g(2.0, 50.0).unwrap() < 1e-300);
    }

    #[test]
    fn trace_ratio_examples() {
        let r1 = torus_trace_ratio(1, 1e-5).unwrap();
        // exact: (4πs)^{1/2}(θ - 1) = 1 - (4πs)^{1/2} up to e^{-1/(4s)}
        assert!((r1 - (1.0 - (4.0 * PI * 1e-5f64).sqrt())).abs() < 1e-12);
        let r4 = torus_trace_ratio(4, 1e-4).unwrap();
        assert!((r4 - 1.0).abs() < 1e-2);
        let r2 = torus_trace_ratio(2, 10.0).unwrap();
        let lead = 4.0 * PI * 10.0 * (-FOUR_PI_SQ * 10.0).exp() * 4.0;
        assert!((r2 / lead - 1.0).abs() < 1e-10 && r2 > 0.0);
        assert!(torus_trace_ratio(1, 0.0).is_err());
    }

    #[test]
    fn heat_sum_envelope() {
        // h_r^{(θ)} ≤ C e^{-λ_1 r} (1∧r)^{-(d/2-θ)} with one C over r ∈ [1e-4, 1]
        for &(d, theta) in &[(1usize, 0.0), (2, 0.5), (3, 1.0)] {
            let lmax = required_cutoff(d, theta, 1e-4, 0, TAIL_TOL).unwrap();
            let m = torus(d, lmax);
            let mut ratios = Vec::new();
            for k in 0..=16 {
                let r = 10f64.powf(-4.0 + k as f64 * 0.25);
                let h = m.spectral_sum_h(theta, r, SumPoint::Mean).unwrap();
                let env = (-m.lambda1() * r).exp() * r.min(1.0).powf(-(d as f64 / 2.0 - theta));
                ratios.push(h / env);
            }
            let c = ratios.iter().cloned().fold(0.0, f64::max);
            let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(c.is_finite() && c / lo < 1e3, "d {d}: {c} {lo}");
        }
    }
}

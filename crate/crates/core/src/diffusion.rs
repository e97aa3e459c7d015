//! Seeded simulation of the diffusion and accumulation of the time-weighted
//! empirical measure `μ_t^{(α)} = (α/t^α) ∫_0^t δ_{X_s} s^{α-1} ds`.
//!
//! The substitution `u = s^α` turns the weight into Lebesgue measure on
//! `[0, t^α]`; paths are sampled at `s_j = (j t^α / m)^{1/α}` and every node
//! carries weight `1/m`.

use crate::error::{invalid, Error, Result};
use crate::rng::{replica_rng, ReplicaRng};
use crate::spectral::{wrap, ModeShape, ModelKind, SpectralModel, FOUR_PI_SQ};
use crate::transport::DiscreteMeasure1D;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

/// Largest Euler–Maruyama substep on the weighted circle.
pub const EM_SUBSTEP: f64 = 1e-3;

/// Density of the initial law with respect to μ.
#[derive(Clone)]
pub struct DensityFn {
    name: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl DensityFn {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    /// `1 + a cos(2π x_1)`.
    pub fn cosine(amplitude: f64) -> Self {
        Self::new(format!("cos:{amplitude}"), move |x| 1.0 + amplitude * (2.0 * PI * x[0]).cos())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for DensityFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DensityFn({})", self.name)
    }
}

#[derive(Debug, Clone)]
pub enum InitialLaw {
    Dirac(Vec<f64>),
    Stationary,
    Density(DensityFn),
}

impl InitialLaw {
    /// Parses `stationary`, `dirac:<x>[,<x>...]` or `density:cos:<amplitude>`;
    /// labels separate coordinates with `;` so they stay CSV-safe.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "stationary" {
            return Ok(Self::Stationary);
        }
        if let Some(rest) = s.strip_prefix("dirac:") {
            let pts: std::result::Result<Vec<f64>, _> = rest.split([',', ';']).map(|p| p.trim().parse()).collect();
            return pts.map(Self::Dirac).map_err(|_| Error::Config(format!("bad dirac point '{rest}'")));
        }
        if let Some(rest) = s.strip_prefix("density:cos:") {
            let a: f64 = rest.parse().map_err(|_| Error::Config(format!("bad amplitude '{rest}'")))?;
            return Ok(Self::Density(DensityFn::cosine(a)));
        }
        Err(Error::Config(format!("unknown initial law '{s}'")))
    }

    pub fn label(&self) -> String {
        match self {
            Self::Stationary => "stationary".into(),
            Self::Dirac(x) => {
                let p: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                format!("dirac:{}", p.join(";"))
            }
            Self::Density(d) => format!("density:{}", d.name()),
        }
    }
}

/// Draws initial points; envelopes are fixed at construction.
#[derive(Debug, Clone)]
pub struct InitialSampler {
    law: InitialLaw,
    model: Arc<SpectralModel>,
    /// Envelope of `e^{V - max V}` for stationary sampling on the circle.
    stationary_env: f64,
    vmax: f64,
    /// Envelope of the density of ν with respect to μ.
    density_env: f64,
}

fn probe_points(dim: usize) -> Vec<Vec<f64>> {
    let per_axis = (4096f64.powf(1.0 / dim as f64)).ceil() as usize;
    let total = per_axis.pow(dim as u32);
    (0..total)
        .map(|mut p| {
            let mut x = vec![0.0; dim];
            for c in x.iter_mut() {
                *c = (p % per_axis) as f64 / per_axis as f64;
                p /= per_axis;
            }
            x
        })
        .collect()
}

impl InitialSampler {
    pub fn new(law: InitialLaw, model: Arc<SpectralModel>) -> Result<Self> {
        let dim = model.dim();
        let (mut stationary_env, mut vmax, mut density_env) = (1.0, 0.0, 1.0);
        if let Some(c) = model.circle() {
            let probes = probe_points(1);
            vmax = probes.iter().map(|x| c.potential.value(x[0])).fold(f64::NEG_INFINITY, f64::max);
            stationary_env = 1.05;
        }
        match &law {
            InitialLaw::Dirac(x) => {
                if x.len() != dim {
                    return Err(invalid(format!("dirac point has {} coordinates, model has {dim}", x.len())));
                }
            }
            InitialLaw::Density(f) => {
                let probes = probe_points(dim);
                let values: Vec<f64> = probes.iter().map(|x| f.eval(x)).collect();
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidDensity(format!(
                        "{} is negative or not finite on the probe grid",
                        f.name()
                    )));
                }
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                if !(mean > 0.0) {
                    return Err(Error::InvalidDensity(format!("{} integrates to zero", f.name())));
                }
                density_env = 1.05 * values.iter().cloned().fold(0.0, f64::max);
            }
            InitialLaw::Stationary => {}
        }
        Ok(Self { law, model, stationary_env, vmax, density_env })
    }

    pub fn law(&self) -> &InitialLaw {
        &self.law
    }

    fn sample_stationary(&self, rng: &mut ReplicaRng) -> Result<Vec<f64>> {
        let dim = self.model.dim();
        match self.model.circle() {
            None => Ok((0..dim).map(|_| rng.random::<f64>()).collect()),
            Some(c) => loop {
                let x: f64 = rng.random();
                let p = (c.potential.value(x) - self.vmax).exp();
                if p > self.stationary_env {
                    return Err(Error::EnvelopeViolated { envelope: self.stationary_env, value: p });
                }
                if rng.random::<f64>() * self.stationary_env < p {
                    return Ok(vec![x]);
                }
            },
        }
    }

    pub fn sample(&self, rng: &mut ReplicaRng) -> Result<Vec<f64>> {
        match &self.law {
            InitialLaw::Dirac(x) => Ok(x.iter().map(|&v| wrap(v)).collect()),
            InitialLaw::Stationary => self.sample_stationary(rng),
            InitialLaw::Density(f) => loop {
                let x = self.sample_stationary(rng)?;
                let v = f.eval(&x);
                if v > self.density_env {
                    return Err(Error::EnvelopeViolated { envelope: self.density_env, value: v });
                }
                if rng.random::<f64>() * self.density_env < v {
                    return Ok(x);
                }
            },
        }
    }
}

/// Draws one point from ν on the model.
pub fn sample_initial(law: &InitialLaw, model: &Arc<SpectralModel>, rng: &mut ReplicaRng) -> Result<Vec<f64>> {
    InitialSampler::new(law.clone(), model.clone())?.sample(rng)
}

/// Quadrature nodes of the time-changed path.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    alpha: f64,
    horizon: f64,
    /// `sqrt(2 (s_j - s_{j-1}))` for `j = 1..=m`.
    scales: Arc<Vec<f64>>,
    max_step: f64,
}

impl TimeGrid {
    /// `s_j = (j t^α / m)^{1/α}` for `j = 1..=m`.
    pub fn weighted(alpha: f64, horizon: f64, m: usize) -> Result<Self> {
        if !(alpha > 0.0) || !(horizon > 0.0) || m == 0 {
            return Err(invalid(format!("bad time grid: alpha {alpha}, t {horizon}, m {m}")));
        }
        let top = horizon.powf(alpha);
        let inv = 1.0 / alpha;
        let times: Vec<f64> = (1..=m)
            .map(|j| if j == m { horizon } else { (j as f64 * top / m as f64).powf(inv) })
            .collect();
        Ok(Self::from_times(alpha, horizon, &times))
    }

    /// Grid from explicit increasing node times starting after `s_0 = 0`.
    pub fn from_times(alpha: f64, horizon: f64, times: &[f64]) -> Self {
        let mut prev = 0.0;
        let mut max_step = 0.0f64;
        let scales: Vec<f64> = times
            .iter()
            .map(|&s| {
                let ds = s - prev;
                prev = s;
                max_step = max_step.max(ds);
                (2.0 * ds).sqrt()
            })
            .collect();
        Self { alpha, horizon, scales: Arc::new(scales), max_step }
    }

    pub fn samples(&self) -> usize {
        self.scales.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn max_step(&self) -> f64 {
        self.max_step
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }
}

/// Smallest `m` whose largest time cell `s_j - s_{j-1}` is at most `max_step`.
pub fn samples_for_step(alpha: f64, horizon: f64, max_step: f64) -> usize {
    // α ≤ 1: last cell ≈ t/(α m); α > 1: first cell t m^{-1/α}
    let last = horizon / (alpha.min(1.0) * max_step);
    let first = if alpha > 1.0 { (horizon / max_step).powf(alpha) } else { 0.0 };
    (last.max(first).ceil() as usize).max(1000)
}

#[derive(Debug, Clone)]
pub struct PathConfig {
    pub model: Arc<SpectralModel>,
    pub alpha: f64,
    pub horizon: f64,
    pub samples: usize,
    pub sampler: InitialSampler,
    pub seed: u64,
}

impl PathConfig {
    pub fn new(
        model: Arc<SpectralModel>,
        alpha: f64,
        horizon: f64,
        samples: usize,
        initial: InitialLaw,
        seed: u64,
    ) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::AlphaOutOfRange { alpha, range: "(0, inf)" });
        }
        let floor = model.horizon_floor();
        if !(horizon >= floor) {
            return Err(Error::HorizonTooShort { t: horizon, t_min: floor });
        }
        if samples == 0 {
            return Err(invalid("samples per path must be positive"));
        }
        let sampler = InitialSampler::new(initial, model.clone())?;
        Ok(Self { model, alpha, horizon, samples, sampler, seed })
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::weighted(self.alpha, self.horizon, self.samples)
    }
}

/// Receives the path at every quadrature node.
pub trait Observer {
    fn observe(&mut self, x: &[f64]);
}

/// Simulates replica `replica` of `cfg` on `grid`, feeding each node to `obs`.
pub fn run_path<O: Observer>(cfg: &PathConfig, grid: &TimeGrid, replica: u64, obs: &mut O) -> Result<()> {
    let mut rng = replica_rng(cfg.seed, replica);
    let x0 = cfg.sampler.sample(&mut rng)?;
    match cfg.model.kind() {
        ModelKind::FlatTorus { dim: 1 } => {
            let mut x = x0[0];
            for &sd in grid.scales() {
                let z: f64 = rng.sample(StandardNormal);
                x = wrap(x + sd * z);
                obs.observe(std::slice::from_ref(&x));
            }
        }
        ModelKind::FlatTorus { dim } => {
            let mut x = x0;
            for &sd in grid.scales() {
                for c in x.iter_mut().take(*dim) {
                    let z: f64 = rng.sample(StandardNormal);
                    *c = wrap(*c + sd * z);
                }
                obs.observe(&x);
            }
        }
        ModelKind::WeightedCircle { potential, .. } => {
            let mut x = x0[0];
            for &sd in grid.scales() {
                let ds = 0.5 * sd * sd;
                let n = (ds / EM_SUBSTEP).ceil().max(1.0) as usize;
                let dt = ds / n as f64;
                let noise = (2.0 * dt).sqrt();
                for _ in 0..n {
                    let z: f64 = rng.sample(StandardNormal);
                    x = wrap(x + potential.derivative(x) * dt + noise * z);
                }
                obs.observe(std::slice::from_ref(&x));
            }
        }
    }
    Ok(())
}

/// How a coefficient vector was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum QuadratureRule {
    /// Midpoint rule on the uniform `u` grid with this many nodes.
    MidpointU { samples: usize },
    /// Occupation histogram with Taylor-corrected bin moments.
    Histogram { samples: usize, bins: usize },
    /// Supplied directly; no truncation tail is attached.
    Synthetic,
}

/// Coefficients `a_i ≈ μ_t^{(α)}(φ_i)` in the model's mode order.
#[derive(Debug, Clone)]
pub struct EmpiricalModes {
    pub model: Arc<SpectralModel>,
    pub alpha: f64,
    pub horizon: f64,
    pub coefficients: Vec<f64>,
    pub rule: QuadratureRule,
}

impl EmpiricalModes {
    pub fn synthetic(model: Arc<SpectralModel>, coefficients: Vec<f64>) -> Result<Self> {
        let n = model.modes()?.len();
        if coefficients.len() != n {
            return Err(invalid(format!("{} coefficients for {n} modes", coefficients.len())));
        }
        Ok(Self { model, alpha: f64::NAN, horizon: f64::NAN, coefficients, rule: QuadratureRule::Synthetic })
    }

    pub fn is_simulated(&self) -> bool {
        self.rule != QuadratureRule::Synthetic
    }

    pub fn regularized(&self, r: f64) -> Result<RegularizedDensity<'_>> {
        RegularizedDensity::new(self, r)
    }
}

enum Plan {
    Torus { dim: usize, kmax: Vec<usize>, pairs: Vec<Vec<i64>>, first_pair: usize, single: Option<bool> },
    Grid { columns: Vec<usize> },
}

/// Accumulates `Σ_j φ_i(X_{s_j})` for a contiguous block of modes.
pub struct ModeAccumulator {
    model: Arc<SpectralModel>,
    plan: Plan,
    offset: usize,
    sums: Vec<f64>,
    count: u64,
    powers: Vec<Vec<(f64, f64)>>,
}

impl ModeAccumulator {
    /// All modes of the model.
    pub fn new(model: Arc<SpectralModel>) -> Result<Self> {
        let n = model.modes()?.len();
        Self::range(model, 0, n)
    }

    /// Modes at positions `start..end`.
    pub fn range(model: Arc<SpectralModel>, start: usize, end: usize) -> Result<Self> {
        let modes = model.modes()?;
        if start >= end || end > modes.len() {
            return Err(invalid(format!("mode range {start}..{end} out of 0..{}", modes.len())));
        }
        let plan = if model.is_torus() {
            let dim = model.dim();
            let mut kmax = vec![0usize; dim];
            let mut pairs: Vec<Vec<i64>> = Vec::new();
            let first_pair = start / 2;
            for m in &modes[2 * first_pair..(2 * ((end + 1) / 2)).min(modes.len())] {
                if let ModeShape::Fourier { wave, parity: crate::spectral::Parity::Cos } = &m.shape {
                    for (c, &k) in wave.components().iter().enumerate() {
                        kmax[c] = kmax[c].max(k.unsigned_abs() as usize);
                    }
                    pairs.push(wave.components().to_vec());
                }
            }
            let single = if end - start == 1 { Some(start % 2 == 0) } else { None };
            Plan::Torus { dim, kmax, pairs, first_pair, single }
        } else {
            let columns = modes[start..end]
                .iter()
                .map(|m| match m.shape {
                    ModeShape::Grid { column } => column,
                    _ => unreachable!("circle modes are grid modes"),
                })
                .collect();
            Plan::Grid { columns }
        };
        let powers = match &plan {
            Plan::Torus { kmax, .. } => kmax.iter().map(|&k| vec![(1.0, 0.0); k + 1]).collect(),
            Plan::Grid { .. } => Vec::new(),
        };
        Ok(Self { model, plan, offset: start, sums: vec![0.0; end - start], count: 0, powers })
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Node count over samples; exactly 1 after a full path.
    pub fn mass(&self, samples: usize) -> f64 {
        self.count as f64 / samples as f64
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn finish(self, cfg: &PathConfig) -> EmpiricalModes {
        let m = cfg.samples as f64;
        EmpiricalModes {
            model: self.model,
            alpha: cfg.alpha,
            horizon: cfg.horizon,
            coefficients: self.sums.iter().map(|s| s / m).collect(),
            rule: QuadratureRule::MidpointU { samples: cfg.samples },
        }
    }
}

impl Observer for ModeAccumulator {
    #[inline]
    fn observe(&mut self, x: &[f64]) {
        self.count += 1;
        match &self.plan {
            Plan::Torus { dim, kmax, pairs, first_pair, single } => {
                for c in 0..*dim {
                    let (s, co) = (2.0 * PI * x[c]).sin_cos();
                    let p = &mut self.powers[c];
                    for k in 1..=kmax[c] {
                        let (re, im) = p[k - 1];
                        p[k] = (re * co - im * s, re * s + im * co);
                    }
                }
                for (q, wave) in pairs.iter().enumerate() {
                    let (mut re, mut im) = (1.0, 0.0);
                    for (c, &k) in wave.iter().enumerate() {
                        let (pr, pi) = self.powers[c][k.unsigned_abs() as usize];
                        let pi = if k < 0 { -pi } else { pi };
                        let nr = re * pr - im * pi;
                        im = re * pi + im * pr;
                        re = nr;
                    }
                    match single {
                        Some(true) => self.sums[0] += SQRT_2 * re,
                        Some(false) => self.sums[0] += SQRT_2 * im,
                        None => {
                            let base = 2 * (first_pair + q);
                            if base >= self.offset && base - self.offset < self.sums.len() {
                                self.sums[base - self.offset] += SQRT_2 * re;
                            }
                            if base + 1 >= self.offset && base + 1 - self.offset < self.sums.len() {
                                self.sums[base + 1 - self.offset] += SQRT_2 * im;
                            }
                        }
                    }
                }
            }
            Plan::Grid { columns } => {
                let c = self.model.circle().expect("grid plan on circle");
                let n = c.nodes;
                let s = x[0] * n as f64;
                let j = (s.floor() as usize).min(n - 1);
                let f = s - j as f64;
                let jn = (j + 1) % n;
                for (slot, &col) in self.sums.iter_mut().zip(columns) {
                    let v = &c.vectors[col];
                    *slot += v[j] * (1.0 - f) + v[jn] * f;
                }
            }
        }
    }
}

/// Occupation histogram of a path on the circle: per bin the node count and
/// the first two moments of the offsets from the bin center.
#[derive(Debug, Clone)]
pub struct OccupationHistogram {
    bins: usize,
    counts: Vec<u32>,
    first: Vec<f64>,
    second: Vec<f64>,
    total: u64,
}

impl OccupationHistogram {
    pub fn new(bins: usize) -> Self {
        Self { bins, counts: vec![0; bins], first: vec![0.0; bins], second: vec![0.0; bins], total: 0 }
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.first.iter_mut().for_each(|c| *c = 0.0);
        self.second.iter_mut().for_each(|c| *c = 0.0);
        self.total = 0;
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn center(&self, b: usize) -> f64 {
        (b as f64 + 0.5) / self.bins as f64
    }

    /// Atoms at the bin barycenters with weights `count / total`.
    pub fn to_measure(&self) -> Result<DiscreteMeasure1D> {
        let n = self.total as f64;
        let mut atoms = Vec::new();
        for b in 0..self.bins {
            let c = self.counts[b];
            if c > 0 {
                atoms.push((self.center(b) + self.first[b] / c as f64, c as f64 / n));
            }
        }
        DiscreteMeasure1D::from_sorted_unchecked(atoms)
    }

    /// `sqrt(Σ_j (x_j - x̄_{bin(j)})² / m)`: W₂ distance between the path
    /// measure and its barycentric coalescence, by the bin-wise coupling.
    pub fn coalescing_bound(&self) -> f64 {
        let mut s = 0.0;
        for b in 0..self.bins {
            let c = self.counts[b];
            if c > 0 {
                s += (self.second[b] - self.first[b] * self.first[b] / c as f64).max(0.0);
            }
        }
        (s / self.total as f64).sqrt()
    }

    /// Torus mode coefficients by second-order Taylor expansion about bin centers.
    pub fn to_modes(&self, model: &Arc<SpectralModel>, alpha: f64, horizon: f64) -> Result<EmpiricalModes> {
        if !model.is_torus() || model.dim() != 1 {
            return Err(Error::TorusOnly("histogram mode projection on the circle"));
        }
        let modes = model.modes()?;
        let n = self.total as f64;
        let mut coefficients = vec![0.0; modes.len()];
        let h = 1.0 / self.bins as f64;
        for pair in 0..modes.len() / 2 {
            let k = match &modes[2 * pair].shape {
                ModeShape::Fourier { wave, .. } => wave.components()[0] as f64,
                _ => unreachable!(),
            };
            let w = 2.0 * PI * k;
            let (ss, sc) = (w * h).sin_cos();
            let (mut re, mut im) = ((0.5 * w * h).cos(), (0.5 * w * h).sin());
            let (mut acc_c, mut acc_s) = (0.0, 0.0);
            for b in 0..self.bins {
                if b % 256 == 0 {
                    let (s0, c0) = (w * self.center(b)).sin_cos();
                    re = c0;
                    im = s0;
                }
                let cnt = self.counts[b];
                if cnt > 0 {
                    let (c1, s1, s2) = (cnt as f64, self.first[b], self.second[b]);
                    // φ = √2 cos: φ' = -w √2 sin, φ'' = -w² φ
                    acc_c += re * (c1 - 0.5 * w * w * s2) - w * im * s1;
                    acc_s += im * (c1 - 0.5 * w * w * s2) + w * re * s1;
                }
                let nr = re * sc - im * ss;
                im = re * ss + im * sc;
                re = nr;
            }
            coefficients[2 * pair] = SQRT_2 * acc_c / n;
            coefficients[2 * pair + 1] = SQRT_2 * acc_s / n;
        }
        Ok(EmpiricalModes {
            model: model.clone(),
            alpha,
            horizon,
            coefficients,
            rule: QuadratureRule::Histogram { samples: self.total as usize, bins: self.bins },
        })
    }
}

impl Observer for OccupationHistogram {
    #[inline]
    fn observe(&mut self, x: &[f64]) {
        let s = x[0] * self.bins as f64;
        let b = (s as usize).min(self.bins - 1);
        let d = (s - b as f64 - 0.5) / self.bins as f64;
        self.counts[b] += 1;
        self.first[b] += d;
        self.second[b] += d * d;
        self.total += 1;
    }
}

/// Records every node; for tests and small paths.
#[derive(Debug, Default, Clone)]
pub struct PathRecorder {
    pub nodes: Vec<Vec<f64>>,
}

impl Observer for PathRecorder {
    fn observe(&mut self, x: &[f64]) {
        self.nodes.push(x.to_vec());
    }
}

/// One replica's coefficient vector over all modes of the model.
pub fn simulate_weighted_modes(cfg: &PathConfig, replica: u64) -> Result<EmpiricalModes> {
    let grid = cfg.time_grid()?;
    simulate_modes_on(cfg, &grid, replica)
}

pub fn simulate_modes_on(cfg: &PathConfig, grid: &TimeGrid, replica: u64) -> Result<EmpiricalModes> {
    let mut acc = ModeAccumulator::new(cfg.model.clone())?;
    run_path(cfg, grid, replica, &mut acc)?;
    Ok(acc.finish(cfg))
}

/// One replica's occupation histogram (circle models only).
pub fn simulate_occupation(cfg: &PathConfig, grid: &TimeGrid, replica: u64, hist: &mut OccupationHistogram) -> Result<()> {
    if cfg.model.dim() != 1 {
        return Err(invalid("occupation histograms are one-dimensional"));
    }
    hist.reset();
    run_path(cfg, grid, replica, hist)
}

/// `f_{t,r}(y) = 1 + Σ e^{-λ_i r} a_i φ_i(y)`.
#[derive(Debug, Clone, Copy)]
pub struct RegularizedDensity<'a> {
    pub base: &'a EmpiricalModes,
    pub r: f64,
}

impl<'a> RegularizedDensity<'a> {
    pub fn new(base: &'a EmpiricalModes, r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(invalid(format!("regularization needs r > 0, got {r}")));
        }
        if base.is_simulated() {
            // |a_i φ_i| ≤ sup φ² ≤ 2 on tori
            let tail = 2.0 * base.model.tail_bound(0.0, r, 0);
            if tail > 1e-10 {
                return Err(Error::InsufficientCutoff { cutoff: base.model.lambda_max(), tail, tol: 1e-10 });
            }
        }
        Ok(Self { base, r })
    }

    pub fn eval(&self, y: &[f64]) -> Result<f64> {
        let model = &self.base.model;
        let modes = model.modes()?;
        let mut s = 1.0;
        for (m, a) in modes.iter().zip(&self.base.coefficients) {
            let w = (-m.eigenvalue * self.r).exp();
            if w == 0.0 {
                break;
            }
            s += w * a * model.eval_shape(&m.shape, y);
        }
        Ok(s)
    }

    /// Values at `x_j = j/n` (one-dimensional models).
    pub fn grid_values(&self, n: usize) -> Result<Vec<f64>> {
        if self.base.model.dim() != 1 {
            return Err(invalid("grid_values is one-dimensional"));
        }
        (0..n).map(|j| self.eval(&[j as f64 / n as f64])).collect()
    }

    /// Exact masses `∫_{[j/n, (j+1)/n)} f dμ` of `n` equal cells (one-dimensional models).
    pub fn cell_masses(&self, n: usize) -> Result<Vec<f64>> {
        let model = &self.base.model;
        if model.dim() != 1 {
            return Err(invalid("cell_masses is one-dimensional"));
        }
        let h = 1.0 / n as f64;
        let modes = model.modes()?;
        let mut masses = vec![0.0; n];
        if let Some(c) = model.circle() {
            // μ-mass of each cell by the trapezoid rule on a refinement of the grid
            let sub = (c.nodes / n).max(1) * 4;
            for (j, slot) in masses.iter_mut().enumerate() {
                let mut s = 0.0;
                for q in 0..sub {
                    let x = (j as f64 + (q as f64 + 0.5) / sub as f64) * h;
                    s += self.eval(&[x])? * c.stationary_density(x);
                }
                *slot = s * h / sub as f64;
            }
            let total: f64 = masses.iter().sum();
            masses.iter_mut().for_each(|m| *m /= total);
            return Ok(masses);
        }
        masses.iter_mut().for_each(|m| *m = h);
        for (m, a) in modes.iter().zip(&self.base.coefficients) {
            let w = (-m.eigenvalue * self.r).exp() * a;
            if w == 0.0 {
                continue;
            }
            if let ModeShape::Fourier { wave, parity } = &m.shape {
                let k = 2.0 * PI * wave.components()[0] as f64;
                let anti = |x: f64| match parity {
                    crate::spectral::Parity::Cos => SQRT_2 * (k * x).sin() / k,
                    crate::spectral::Parity::Sin => -SQRT_2 * (k * x).cos() / k,
                };
                let mut prev = anti(0.0);
                for (j, slot) in masses.iter_mut().enumerate() {
                    let next = anti((j + 1) as f64 * h);
                    *slot += w * (next - prev);
                    prev = next;
                }
            }
        }
        Ok(masses)
    }
}

/// Closed-form stationary second moment of one torus coefficient at `α = 1`:
/// `E[a²] = (2/t²)(t/λ - (1 - e^{-λt})/λ²)`.
pub fn stationary_coefficient_variance(lambda: f64, t: f64) -> f64 {
    2.0 / (t * t) * (t / lambda - (1.0 - (-lambda * t).exp()) / (lambda * lambda))
}

/// One exact torus increment density over time `dt` on a first coordinate.
pub fn increment_density(dt: f64, delta: f64) -> f64 {
    crate::spectral::wrapped_gaussian(dt, delta)
}

/// `λ_1` of the flat torus.
pub const TORUS_GAP: f64 = FOUR_PI_SQ;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::ModelKind;
    use crate::stats::{chi_square, chi_square_critical_1pct, ks_critical_1pct, ks_statistic, MCEstimate};

    fn torus(d: usize, lmax_units: f64) -> Arc<SpectralModel> {
        Arc::new(SpectralModel::enumerate(ModelKind::torus(d), FOUR_PI_SQ * lmax_units).unwrap())
    }

    #[test]
    fn constant_function_has_unit_mass() {
        for &alpha in &[0.3, 0.5, 1.0, 2.0] {
            let m = torus(1, 4.0);
            let cfg = PathConfig::new(m.clone(), alpha, 10.0, 1234, InitialLaw::Stationary, 5).unwrap();
            let mut acc = ModeAccumulator::new(m).unwrap();
            run_path(&cfg, &cfg.time_grid().unwrap(), 0, &mut acc).unwrap();
            assert_eq!(acc.mass(cfg.samples), 1.0);
        }
        let circ = Arc::new(
            SpectralModel::enumerate(
                ModelKind::circle(crate::spectral::Potential::cosine(0.5), 256),
                2000.0,
            )
            .unwrap(),
        );
        let cfg = PathConfig::new(circ.clone(), 0.5, 4.0, 1000, InitialLaw::Stationary, 5).unwrap();
        let mut acc = ModeAccumulator::new(circ).unwrap();
        run_path(&cfg, &cfg.time_grid().unwrap(), 0, &mut acc).unwrap();
        assert_eq!(acc.mass(cfg.samples), 1.0);
    }

    #[test]
    fn stationary_coefficients_are_centered_with_exact_variance() {
        let m = torus(1, 4.0);
        let t = 10.0;
        let cfg = PathConfig::new(m.clone(), 1.0, t, 10_000, InitialLaw::Stationary, 11).unwrap();
        let grid = cfg.time_grid().unwrap();
        let reps = 2000;
        let mut first = Vec::with_capacity(reps);
        let mut squares = Vec::with_capacity(reps);
        let mut others = vec![Vec::with_capacity(reps); 4];
        for rep in 0..reps as u64 {
            let e = simulate_modes_on(&cfg, &grid, rep).unwrap();
            first.push(e.coefficients[0]);
            squares.push(e.coefficients[0].powi(2));
            for (i, o) in others.iter_mut().enumerate() {
                o.push(e.coefficients[i]);
            }
            for a in &e.coefficients {
                assert!(a.abs() <= SQRT_2);
            }
        }
        for o in &others {
            let est = MCEstimate::from_samples(o);
            assert!(est.mean.abs() < 3.0 * est.stderr, "{est:?}");
        }
        let target = stationary_coefficient_variance(FOUR_PI_SQ, t);
        assert!((target - 5.0532e-3).abs() < 1e-7, "{target}");
        let est = MCEstimate::from_samples(&squares);
        assert!(est.z_score(target).abs() < 3.0, "{est:?} vs {target}");
    }

    #[test]
    fn time_change_relabeling_replays_exactly() {
        let m = torus(1, 9.0);
        let (alpha, t, n) = (0.4, 12.0, 3000usize);
        let cfg = PathConfig::new(m, alpha, t, n, InitialLaw::Dirac(vec![0.3]), 99).unwrap();
        let direct = simulate_weighted_modes(&cfg, 4).unwrap();
        // α = 1 grid on [0, t^α], relabeled through s = u^{1/α}
        let top = t.powf(alpha);
        let times: Vec<f64> = (1..=n)
            .map(|j| {
                let u = if j == n { top } else { j as f64 * top / n as f64 };
                if j == n { t } else { u.powf(1.0 / alpha) }
            })
            .collect();
        let grid = TimeGrid::from_times(alpha, t, &times);
        let replay = simulate_modes_on(&cfg, &grid, 4).unwrap();
        assert_eq!(direct.coefficients, replay.coefficients);
    }

    #[test]
    fn one_step_increments_match_wrapped_density() {
        let m = torus(1, 1.0);
        let cfg = PathConfig::new(m, 1.0, 2.0, 1, InitialLaw::Dirac(vec![0.0]), 3).unwrap();
        let dt = 0.05;
        let grid = TimeGrid::from_times(1.0, dt, &[dt]);
        let bins = 50;
        let n = 100_000;
        let mut counts = vec![0u64; bins];
        for rep in 0..n {
            let mut rec = PathRecorder::default();
            run_path(&cfg, &grid, rep, &mut rec).unwrap();
            let x = rec.nodes[0][0];
            counts[((x * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let expected: Vec<f64> = (0..bins)
            .map(|b| {
                let sub = 64;
                (0..sub)
                    .map(|q| {
                        let x = (b as f64 + (q as f64 + 0.5) / sub as f64) / bins as f64;
                        increment_density(dt, x)
                    })
                    .sum::<f64>()
                    / (sub * bins) as f64
                    * n as f64
            })
            .collect();
        let chi = chi_square(&counts, &expected);
        assert!(chi < chi_square_critical_1pct(bins - 1), "chi2 {chi}");
    }

    #[test]
    fn initial_sampler_examples() {
        let m = torus(1, 1.0);
        let mut rng = replica_rng(1, 0);
        let x = sample_initial(&InitialLaw::Dirac(vec![0.25]), &m, &mut rng).unwrap();
        assert_eq!(x, vec![0.25]);

        let m2 = torus(2, 1.0);
        let sampler = InitialSampler::new(InitialLaw::Stationary, m2).unwrap();
        let draws: Vec<Vec<f64>> = (0..10_000).map(|_| sampler.sample(&mut rng).unwrap()).collect();
        for c in 0..2 {
            let xs: Vec<f64> = draws.iter().map(|p| p[c]).collect();
            let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
            assert!(d < ks_critical_1pct(xs.len()), "coordinate {c}: {d}");
        }

        let law = InitialLaw::Density(DensityFn::cosine(0.5));
        let sampler = InitialSampler::new(law, m).unwrap();
        let cosines: Vec<f64> = (0..100_000)
            .map(|_| (2.0 * PI * sampler.sample(&mut rng).unwrap()[0]).cos())
            .collect();
        let est = MCEstimate::from_samples(&cosines);
        assert!(est.z_score(0.25).abs() < 3.0, "{est:?}");
    }

    #[test]
    fn invalid_density_is_rejected() {
        let m = torus(1, 1.0);
        let law = InitialLaw::Density(DensityFn::new("negative", |x| x[0] - 0.5));
        assert!(matches!(InitialSampler::new(law, m.clone()), Err(Error::InvalidDensity(_))));
        // a spike between probe points breaks the envelope
        let spike = DensityFn::new("spike", |x| if (x[0] - 0.50006).abs() < 5e-5 { 1e6 } else { 1.0 });
        let sampler = InitialSampler::new(InitialLaw::Density(spike), m).unwrap();
        let mut rng = replica_rng(2, 0);
        let mut violated = false;
        for _ in 0..200_000 {
            if let Err(Error::EnvelopeViolated { .. }) = sampler.sample(&mut rng) {
                violated = true;
                break;
            }
        }
        assert!(violated);
    }

    #[test]
    fn histogram_matches_direct_accumulation() {
        let m = torus(1, 400.0);
        let cfg = PathConfig::new(m.clone(), 0.75, 20.0, 20_000, InitialLaw::Stationary, 21).unwrap();
        let grid = cfg.time_grid().unwrap();
        let direct = simulate_modes_on(&cfg, &grid, 7).unwrap();
        let mut hist = OccupationHistogram::new(4096);
        simulate_occupation(&cfg, &grid, 7, &mut hist).unwrap();
        let binned = hist.to_modes(&m, cfg.alpha, cfg.horizon).unwrap();
        for (i, (a, b)) in direct.coefficients.iter().zip(&binned.coefficients).enumerate() {
            let k = (i / 2 + 1) as f64;
            let h = 1.0 / 4096.0;
            let bound = 2.0 * (2.0 * PI * k * h).powi(3) / 24.0 + 1e-13;
            assert!((a - b).abs() < bound, "mode {i}: {a} vs {b}");
        }
        let measure = hist.to_measure().unwrap();
        let mass: f64 = measure.weights().iter().sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(hist.coalescing_bound() <= 0.5 / 4096.0);
    }

    #[test]
    fn quadrature_refinement_is_first_order() {
        let m = torus(1, 4.0);
        let t = 5.0;
        let fine = 16_000;
        let cfg = PathConfig::new(m.clone(), 1.0, t, fine, InitialLaw::Dirac(vec![0.1]), 8).unwrap();
        let grid = cfg.time_grid().unwrap();
        let mut worst = Vec::new();
        for rep in 0..20u64 {
            let mut rec = PathRecorder::default();
            run_path(&cfg, &grid, rep, &mut rec).unwrap();
            let coef = |stride: usize| -> f64 {
                let pts: Vec<f64> = rec.nodes.iter().skip(stride - 1).step_by(stride).map(|p| p[0]).collect();
                pts.iter().map(|x| SQRT_2 * (2.0 * PI * x).cos()).sum::<f64>() / pts.len() as f64
            };
            // m = fine/8, fine/4, fine/2 against their doublings
            let diffs: Vec<f64> = [8usize, 4, 2]
                .iter()
                .map(|&s| (coef(s) - coef(s / 2)).abs() * (fine / s) as f64)
                .collect();
            worst.push(diffs);
        }
        // C = m |a(m) - a(2m)| stays bounded as m doubles
        for level in 0..3 {
            let c: f64 = worst.iter().map(|d| d[level]).fold(0.0, f64::max);
            assert!(c < 20.0 * t.sqrt(), "level {level}: {c}");
        }
    }

    #[test]
    fn regularized_density_properties() {
        let m = torus(1, 2000.0);
        let cfg = PathConfig::new(m.clone(), 1.0, 10.0, 5000, InitialLaw::Stationary, 2).unwrap();
        let e = simulate_weighted_modes(&cfg, 0).unwrap();
        let f = e.regularized(0.01).unwrap();
        let vals = f.grid_values(512).unwrap();
        let mean = vals.iter().sum::<f64>() / 512.0;
        assert!((mean - 1.0).abs() < 1e-10);
        let masses = f.cell_masses(512).unwrap();
        assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let far = e.regularized(1e3).unwrap();
        assert_eq!(far.eval(&[0.3]).unwrap(), 1.0);
        let zero = EmpiricalModes::synthetic(m.clone(), vec![0.0; m.modes().unwrap().len()]).unwrap();
        assert_eq!(zero.regularized(0.1).unwrap().eval(&[0.7]).unwrap(), 1.0);
        assert!(e.regularized(0.0).is_err());
    }

    #[test]
    fn replicas_are_reproducible() {
        let m = torus(2, 3.0);
        let cfg = PathConfig::new(m, 0.5, 5.0, 2000, InitialLaw::Stationary, 77).unwrap();
        let a = simulate_weighted_modes(&cfg, 3).unwrap();
        let b = simulate_weighted_modes(&cfg, 3).unwrap();
        let c = simulate_weighted_modes(&cfg, 4).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
        assert_ne!(a.coefficients, c.coefficients);
    }
}

//! Declarative experiments: configuration, a deterministic replica runner,
//! the experiment drivers and their persistent records.

pub mod config;
pub mod experiments;
pub mod record;

pub use config::{ExperimentConfig, ExperimentKind, NormSelection, RRule, WORKERS_ENV};
pub use experiments::{run, run_with_workers};
pub use record::{Assertion, OracleRow, Row, RunRecord, SpectralRow, Table};

use crate::diffusion::{
    run_path, samples_for_step, EmpiricalModes, InitialLaw, ModeAccumulator, Observer, OccupationHistogram,
    PathConfig, TimeGrid,
};
use crate::error::{invalid, Error, Result};
use crate::special::is_half;
use crate::spectral::{ModelKind, SpectralModel, FOUR_PI_SQ};
use rayon::prelude::*;
use std::sync::Arc;

/// `R_α(t)^{-1}`: exactly `t` for `α > ½`, `t / ln t` at `α = ½`, `t^{2α}` below.
pub fn renormalization(alpha: f64, t: f64) -> f64 {
    if is_half(alpha) {
        t / t.ln()
    } else if alpha > 0.5 {
        t
    } else {
        t.powf(2.0 * alpha)
    }
}

/// Stream id of replica `i` at experiment point `point`.
pub fn replica_id(point: usize, i: usize) -> u64 {
    ((point as u64) << 32) | i as u64
}

/// Bounded worker pool with index-ordered collection.
pub struct Runner {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl Runner {
    pub fn new(workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| invalid(format!("worker pool: {e}")))?;
        Ok(Self { pool, workers: workers.max(1) })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// `f(state, i)` for `i in 0..n`, results in index order.
    pub fn map<S, T, I, F>(&self, n: usize, init: I, f: F) -> Result<Vec<T>>
    where
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, usize) -> Result<T> + Sync + Send,
        T: Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map_init(&init, |s, i| f(s, i)).collect())
    }
}

/// Everything an experiment point needs: config, model, initial law and workers.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub model: Arc<SpectralModel>,
    pub nu: InitialLaw,
    pub runner: Runner,
}

/// Default cutoff for weighted-circle models: most of the grid spectrum.
fn circle_cutoff(grid: usize) -> f64 {
    FOUR_PI_SQ * (grid as f64 / 4.0).powi(2)
}

impl Context {
    /// Builds the model with cutoff `lambda_max` from the config, or `needed` if unset.
    pub fn new(cfg: &ExperimentConfig, needed: f64, workers: usize) -> Result<Self> {
        cfg.validate()?;
        let kind = cfg.model_kind()?;
        let cutoff = match (cfg.lambda_max, &kind) {
            (Some(l), _) => l,
            (None, ModelKind::WeightedCircle { grid, .. }) => circle_cutoff(*grid).max(needed),
            (None, _) => needed.max(FOUR_PI_SQ * 4.0 + 1.0),
        };
        let model = Arc::new(SpectralModel::enumerate(kind, cutoff)?);
        let floor = model.horizon_floor();
        if let Some(&t) = cfg.t_grid.first() {
            if !(t >= floor) {
                return Err(Error::HorizonTooShort { t, t_min: floor });
            }
        }
        Ok(Self { cfg: cfg.clone(), model, nu: cfg.initial_law()?, runner: Runner::new(workers)? })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Quadrature nodes per path: the configured count or the step target.
    pub fn samples(&self, alpha: f64, t: f64) -> usize {
        self.cfg.samples.unwrap_or_else(|| samples_for_step(alpha, t, self.cfg.max_step))
    }

    pub fn path_config(&self, alpha: f64, t: f64) -> Result<PathConfig> {
        PathConfig::new(self.model.clone(), alpha, t, self.samples(alpha, t), self.nu.clone(), self.cfg.seed)
    }

    fn uses_histogram(&self) -> bool {
        self.model.is_torus() && self.model.dim() == 1 && self.cfg.bins > 0
    }

    /// Per-replica statistic of the mode coefficients.
    pub fn coefficient_samples<T: Send>(
        &self,
        alpha: f64,
        t: f64,
        point: usize,
        f: impl Fn(&EmpiricalModes) -> Result<T> + Sync + Send,
    ) -> Result<Vec<T>> {
        let pc = self.path_config(alpha, t)?;
        let grid = pc.time_grid()?;
        let bins = self.cfg.bins;
        if self.uses_histogram() {
            self.runner.map(
                self.cfg.replicas,
                || OccupationHistogram::new(bins),
                |h, i| {
                    h.reset();
                    run_path(&pc, &grid, replica_id(point, i), h)?;
                    f(&h.to_modes(&pc.model, alpha, t)?)
                },
            )
        } else {
            self.runner.map(
                self.cfg.replicas,
                || (),
                |_, i| {
                    let mut acc = ModeAccumulator::new(pc.model.clone())?;
                    run_path(&pc, &grid, replica_id(point, i), &mut acc)?;
                    f(&acc.finish(&pc))
                },
            )
        }
    }

    /// Per-replica statistic of the occupation histogram and, when requested,
    /// the mode coefficients of the same path.
    pub fn occupation_samples<T: Send>(
        &self,
        alpha: f64,
        t: f64,
        point: usize,
        with_modes: bool,
        f: impl Fn(&OccupationHistogram, Option<&EmpiricalModes>) -> Result<T> + Sync + Send,
    ) -> Result<Vec<T>> {
        if self.dim() != 1 {
            return Err(invalid("occupation histograms need a one-dimensional model"));
        }
        let pc = self.path_config(alpha, t)?;
        let grid = pc.time_grid()?;
        let bins = self.cfg.bins.max(2);
        let torus = self.model.is_torus();
        self.runner.map(
            self.cfg.replicas,
            || OccupationHistogram::new(bins),
            |h, i| {
                h.reset();
                let id = replica_id(point, i);
                if !with_modes {
                    run_path(&pc, &grid, id, h)?;
                    return f(h, None);
                }
                if torus {
                    run_path(&pc, &grid, id, h)?;
                    let m = h.to_modes(&pc.model, alpha, t)?;
                    return f(h, Some(&m));
                }
                let mut acc = ModeAccumulator::new(pc.model.clone())?;
                run_path(&pc, &grid, id, &mut Pair(h, &mut acc))?;
                f(h, Some(&acc.finish(&pc)))
            },
        )
    }

    /// Per-replica statistic of the occupation counts on the `n^d` torus grid.
    pub fn grid_samples<T: Send>(
        &self,
        alpha: f64,
        t: f64,
        point: usize,
        n: usize,
        f: impl Fn(&GridCounter) -> Result<T> + Sync + Send,
    ) -> Result<Vec<T>> {
        if !self.model.is_torus() {
            return Err(Error::TorusOnly("grid occupation counts"));
        }
        let pc = self.path_config(alpha, t)?;
        let grid: TimeGrid = pc.time_grid()?;
        let dim = self.dim();
        self.runner.map(
            self.cfg.replicas,
            || GridCounter::new(dim, n),
            |g, i| {
                g.reset();
                run_path(&pc, &grid, replica_id(point, i), g)?;
                f(g)
            },
        )
    }
}

struct Pair<'a, A, B>(&'a mut A, &'a mut B);

impl<A: Observer, B: Observer> Observer for Pair<'_, A, B> {
    #[inline]
    fn observe(&mut self, x: &[f64]) {
        self.0.observe(x);
        self.1.observe(x);
    }
}

/// Node counts per cell of the `n^d` grid, last axis fastest.
#[derive(Debug, Clone)]
pub struct GridCounter {
    dim: usize,
    n: usize,
    counts: Vec<u32>,
    total: u64,
}

impl GridCounter {
    pub fn new(dim: usize, n: usize) -> Self {
        Self { dim, n, counts: vec![0; n.pow(dim as u32)], total: 0 }
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.total = 0;
    }

    /// Density values `count · n^d / total`.
    pub fn density(&self) -> Vec<f64> {
        let c = self.counts.len() as f64 / self.total as f64;
        self.counts.iter().map(|&k| k as f64 * c).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.n
    }
}

impl Observer for GridCounter {
    #[inline]
    fn observe(&mut self, x: &[f64]) {
        let mut p = 0;
        for &c in &x[..self.dim] {
            p = p * self.n + ((c * self.n as f64) as usize).min(self.n - 1);
        }
        self.counts[p] += 1;
        self.total += 1;
    }
}

//! Experiment drivers. Each returns rows, assertions and a JSON sidecar;
//! [`run`] wraps them into a [`RunRecord`].

use super::config::{fnv1a, ExperimentConfig, ExperimentKind, NormSelection, RRule};
use super::record::{Assertion, OracleRow, Row, RunRecord, SpectralRow, Table};
use super::{renormalization, Context};
use crate::diffusion::{EmpiricalModes, InitialLaw};
use crate::error::{invalid, Error, Result};
use crate::norms::{
    derivative_identity_defect, l2_norm_sq, limit_constant, sobolev_neg1_norm_sq, stationary_l2_expectation,
    stationary_l2_integral, stationary_sobolev_expectation, sup_norm,
};
use crate::special::is_half;
use crate::spectral::{
    required_cutoff, torus_hbar_mellin, ModeShape, ModelKind, SpectralModel, SumPoint, FOUR_PI_SQ, TAIL_TOL,
};
use crate::stats::{linear_fit, MCEstimate};
use crate::transport::checks::CELLS;
use crate::transport::{
    heat_flow_contraction_check, log_mean_fluctuation_check, sinkhorn_divergence, w2_circle_exact,
    w2_circle_quantiles, w2_discrete_to_uniform, w2_lp_bruteforce, w2_to_uniform, w2_upper_surrogate,
    CircleQuantile, DiscreteMeasure1D, PeriodicGridMeasure, SinkhornOptions,
};
use rand::{Rng, SeedableRng};
use serde_json::json;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

/// Rows, assertions and extra JSON of one experiment.
pub struct Outcome {
    pub table: Table,
    pub assertions: Vec<Assertion>,
    pub extra: serde_json::Value,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunRecord> {
    run_with_workers(cfg, cfg.effective_workers())
}

pub fn run_with_workers(cfg: &ExperimentConfig, workers: usize) -> Result<RunRecord> {
    let start = Instant::now();
    let out = match cfg.experiment {
        ExperimentKind::Limits => limits(cfg, workers)?,
        ExperimentKind::Scaling => scaling(cfg, workers)?,
        ExperimentKind::OracleCheck => oracle_check(cfg, workers)?,
        ExperimentKind::D4Constant => d4_constant(cfg)?,
        ExperimentKind::RegularizationGap => regularization_gap(cfg, workers)?,
        ExperimentKind::Fluctuation => fluctuation(cfg, workers)?,
        ExperimentKind::TransportSelftest => transport_selftest(cfg, workers)?,
        ExperimentKind::SpectralTable => spectral_table(cfg)?,
    };
    let csv = out.table.to_csv();
    Ok(RunRecord {
        experiment: cfg.experiment.to_string(),
        config_hash: format!("{:016x}", cfg.hash()),
        content_version: format!("{:016x}", fnv1a(csv.as_bytes())),
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        workers,
        config: cfg.canonical(),
        table: out.table,
        assertions: out.assertions,
        extra: out.extra,
    })
}

/// Cutoff certifying squared-coefficient sums at smoothing `r`.
pub fn norm_cutoff(dim: usize, r: f64) -> Result<f64> {
    required_cutoff(dim, 0.0, 2.0 * r, 0, TAIL_TOL / 2.0)
}

/// Cutoff certifying pointwise density evaluation at smoothing `r`.
pub fn density_cutoff(dim: usize, r: f64) -> Result<f64> {
    required_cutoff(dim, 0.0, r, 0, 4e-11)
}

fn model_dim(cfg: &ExperimentConfig) -> Result<usize> {
    Ok(cfg.model_kind()?.dim())
}

fn rows_min_r(cfg: &ExperimentConfig) -> f64 {
    cfg.r_rule.min_over(&cfg.t_grid)
}

impl Context {
    pub fn label(&self) -> String {
        self.model.kind().label()
    }

    /// A harness row with `renormalized = factor · estimate` and its z-score against `limit`.
    pub fn row(&self, alpha: f64, t: f64, r: f64, est: &MCEstimate, factor: f64, limit: f64) -> Row {
        let renormalized = est.mean * factor;
        Row {
            experiment: self.cfg.experiment.to_string(),
            model: self.label(),
            d: self.dim(),
            alpha,
            nu: self.nu.label(),
            t,
            r,
            replicas: est.replicas,
            estimate: est.mean,
            stderr: est.stderr,
            renormalized,
            limit_constant: limit,
            z_score: (renormalized - limit) / (factor * est.stderr),
        }
    }

    /// `E W₂²(μ_t, μ)` with the largest histogram coalescing bound seen.
    pub fn w2_point(&self, alpha: f64, t: f64, point: usize) -> Result<(MCEstimate, f64)> {
        let target = if self.model.is_torus() {
            None
        } else {
            let flat = EmpiricalModes::synthetic(self.model.clone(), vec![0.0; self.model.modes()?.len()])?;
            Some(CircleQuantile::from_cell_masses(&flat.regularized(1.0)?.cell_masses(CELLS)?)?)
        };
        let v = self.occupation_samples(alpha, t, point, false, |h, _| {
            let m = h.to_measure()?;
            let w = match &target {
                None => w2_discrete_to_uniform(&m)?,
                Some(q) => w2_circle_quantiles(&CircleQuantile::from_discrete(&m), q),
            };
            Ok((w, h.coalescing_bound()))
        })?;
        let w: Vec<f64> = v.iter().map(|p| p.0).collect();
        Ok((MCEstimate::from_samples(&w), v.iter().map(|p| p.1).fold(0.0, f64::max)))
    }

    /// Debiased Sinkhorn divergence between the grid occupation density and the uniform grid.
    pub fn sinkhorn_point(&self, alpha: f64, t: f64, point: usize) -> Result<MCEstimate> {
        let (dim, n) = (self.dim(), self.cfg.grid);
        let opts = SinkhornOptions { epsilon: self.cfg.epsilon, ..SinkhornOptions::default() };
        let uniform = PeriodicGridMeasure::new(dim, n, vec![1.0; n.pow(dim as u32)])?;
        let v = self.grid_samples(alpha, t, point, n, |g| {
            let a = PeriodicGridMeasure::new(dim, n, g.density())?;
            Ok(sinkhorn_divergence(&a, &uniform, &opts)?.divergence)
        })?;
        Ok(MCEstimate::from_samples(&v))
    }

    /// `(E‖f_{t,r} − 1‖₂², E‖f_{t,r} − 1‖²_{H⁻¹})` for every `r`, from one set of paths.
    pub fn norm_point(&self, alpha: f64, t: f64, rs: &[f64], point: usize) -> Result<Vec<(MCEstimate, MCEstimate)>> {
        let v = self.coefficient_samples(alpha, t, point, |m| {
            rs.iter().map(|&r| Ok((l2_norm_sq(m, r)?, sobolev_neg1_norm_sq(m, r)?))).collect::<Result<Vec<_>>>()
        })?;
        Ok((0..rs.len())
            .map(|k| {
                let l2: Vec<f64> = v.iter().map(|x| x[k].0).collect();
                let sob: Vec<f64> = v.iter().map(|x| x[k].1).collect();
                (MCEstimate::from_samples(&l2), MCEstimate::from_samples(&sob))
            })
            .collect())
    }

    /// `E‖f_{t,r} − 1‖²_{H⁻¹}` for every `r`.
    pub fn sobolev_point(&self, alpha: f64, t: f64, rs: &[f64], point: usize) -> Result<Vec<MCEstimate>> {
        let v = self.coefficient_samples(alpha, t, point, |m| {
            rs.iter().map(|&r| sobolev_neg1_norm_sq(m, r)).collect::<Result<Vec<_>>>()
        })?;
        Ok((0..rs.len())
            .map(|k| MCEstimate::from_samples(&v.iter().map(|x| x[k]).collect::<Vec<_>>()))
            .collect())
    }

    /// Replica values of one mode coefficient (zero-based mode index).
    pub fn coefficient_values(&self, alpha: f64, t: f64, mode: usize, point: usize) -> Result<Vec<f64>> {
        let count = self.model.modes()?.len();
        if mode >= count {
            return Err(Error::ModeIndex { index: mode, count });
        }
        self.coefficient_samples(alpha, t, point, |m| Ok(m.coefficients[mode]))
    }

    /// Replica values of `W₂²(μ_{t,r}, μ_t)` for every `r` (one-dimensional models).
    pub fn gap_values(&self, alpha: f64, t: f64, rs: &[f64], point: usize) -> Result<Vec<Vec<f64>>> {
        self.occupation_samples(alpha, t, point, true, |h, modes| {
            let modes = modes.expect("requested");
            let q = CircleQuantile::from_discrete(&h.to_measure()?);
            rs.iter()
                .map(|&r| {
                    let cells = CircleQuantile::from_cell_masses(&modes.regularized(r)?.cell_masses(CELLS)?)?;
                    Ok(w2_circle_quantiles(&q, &cells))
                })
                .collect()
        })
    }

    /// Replica values of the grid supremum of `|f_{t,r} − 1|` for every `r`.
    pub fn sup_values(&self, alpha: f64, t: f64, rs: &[f64], point: usize) -> Result<Vec<Vec<f64>>> {
        let res = self.cfg.resolution;
        self.coefficient_samples(alpha, t, point, |m| {
            rs.iter().map(|&r| Ok(sup_norm(m, r, res)?.value)).collect()
        })
    }
}

fn context(cfg: &ExperimentConfig, needed: f64, workers: usize) -> Result<Context> {
    Context::new(cfg, needed, workers)
}

fn limits(cfg: &ExperimentConfig, workers: usize) -> Result<Outcome> {
    let dim = model_dim(cfg)?;
    if dim > 2 {
        return Err(invalid("limits estimates W₂ directly only for d ≤ 2"));
    }
    let ctx = context(cfg, FOUR_PI_SQ * 4.0 + 1.0, workers)?;
    let tol = |alpha: f64| {
        cfg.tolerance.unwrap_or(if is_half(alpha) {
            0.15
        } else if alpha > 0.5 {
            0.05
        } else {
            0.10
        })
    };
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    let mut coalescing = Vec::new();
    let mut point = 0;
    for &alpha in &cfg.alpha {
        let limit = limit_constant(&ctx.model, alpha, &ctx.nu)?.value;
        let mut series = Vec::new();
        for &t in &cfg.t_grid {
            let est = if dim == 1 {
                let (e, c) = ctx.w2_point(alpha, t, point)?;
                coalescing.push(json!({ "alpha": alpha, "t": t, "max_coalescing_w2": c }));
                e
            } else {
                ctx.sinkhorn_point(alpha, t, point)?
            };
            point += 1;
            let factor = renormalization(alpha, t);
            let mut row = ctx.row(alpha, t, 0.0, &est, factor, limit);
            if dim == 2 {
                row.model = format!("{}~sinkhorn", row.model);
            }
            series.push((t, row.renormalized, factor * est.stderr, row.z_score));
            rows.push(row);
        }
        let Some(&(t, last, _, z)) = series.last() else { continue };
        let rel = (last / limit - 1.0).abs();
        let tol = tol(alpha);
        assertions.push(Assertion::new(
            format!("alpha={alpha} t={t} within {tol} of limit"),
            rel <= tol,
            format!("renormalized {last} vs {limit}, relative error {rel}"),
        ));
        if is_half(alpha) {
            let mono = series.windows(2).all(|p| p[1].1 <= p[0].1 + 2.0 * p[0].2.hypot(p[1].2));
            assertions.push(Assertion::new(
                format!("alpha={alpha} decreasing within error bars"),
                mono,
                format!("{:?}", series.iter().map(|s| s.1).collect::<Vec<_>>()),
            ));
        } else if alpha > 0.5 {
            assertions.push(Assertion::new(format!("alpha={alpha} t={t} |z| <= 3"), z.abs() <= 3.0, format!("z = {z}")));
        }
    }
    Ok(Outcome {
        table: Table::Harness(rows),
        assertions,
        extra: json!({ "coalescing": coalescing, "approximate": dim == 2 }),
    })
}

/// Exponent of the `W₂²` rate at `(d, α)`.
pub fn predicted_w2_exponent(dim: usize, alpha: f64) -> f64 {
    if dim == 3 && alpha <= 0.25 {
        -4.0 * alpha / (3.0 - 4.0 * alpha)
    } else if alpha >= 0.5 {
        -1.0
    } else {
        -2.0 * alpha
    }
}

fn scaling(cfg: &ExperimentConfig, workers: usize) -> Result<Outcome> {
    if cfg.t_grid.len() < 4 {
        return Err(Error::Config(format!("scaling needs at least 4 horizons, got {}", cfg.t_grid.len())));
    }
    let dim = model_dim(cfg)?;
    let ctx = context(cfg, norm_cutoff(dim, rows_min_r(cfg))?, workers)?;
    let slope_tol = cfg.slope_tol.unwrap_or(if dim == 3 { 0.15 } else { 0.1 });
    let series_count = cfg.r_rule.at(cfg.t_grid[0]).len();
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    let mut fits = Vec::new();
    let mut point = 0;
    for &alpha in &cfg.alpha {
        let mut logs = vec![(Vec::new(), Vec::new()); series_count];
        for &t in &cfg.t_grid {
            let rs = cfg.r_rule.at(t);
            let est = ctx.sobolev_point(alpha, t, &rs, point)?;
            point += 1;
            let factor = renormalization(alpha, t);
            for (k, (e, &r)) in est.iter().zip(&rs).enumerate() {
                rows.push(ctx.row(alpha, t, r, e, factor, f64::NAN));
                logs[k].0.push(t.ln());
                logs[k].1.push(e.mean.ln());
            }
        }
        for (k, (x, y)) in logs.iter().enumerate() {
            let fit = linear_fit(x, y);
            let predicted = if is_half(alpha) {
                None
            } else if alpha > 0.5 {
                Some(-1.0)
            } else {
                Some(-2.0 * alpha)
            };
            let series = match &cfg.r_rule {
                RRule::Fixed(rs) => format!("r={}", rs[k]),
                RRule::Power { beta } => format!("r=t^-{beta}"),
            };
            fits.push(json!({
                "alpha": alpha,
                "series": series,
                "slope": fit.slope,
                "slope_stderr": fit.slope_stderr,
                "r_squared": fit.r_squared,
                "proxy_slope": predicted,
                "w2_exponent": predicted_w2_exponent(dim, alpha),
            }));
            if let Some(p) = predicted {
                assertions.push(Assertion::new(
                    format!("alpha={alpha} {series} slope {p} ± {slope_tol}"),
                    (fit.slope - p).abs() <= slope_tol,
                    format!("fitted {} (stderr {})", fit.slope, fit.slope_stderr),
                ));
            }
        }
    }
    Ok(Outcome { table: Table::Harness(rows), assertions, extra: json!({ "fits": fits }) })
}

fn oracle_check(cfg: &ExperimentConfig, workers: usize) -> Result<Outcome> {
    if !matches!(cfg.initial_law()?, InitialLaw::Stationary) {
        return Err(Error::Config("oracle-check needs nu = stationary".into()));
    }
    let dim = model_dim(cfg)?;
    let ctx = context(cfg, norm_cutoff(dim, rows_min_r(cfg))?, workers)?;
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    let mut point = 0;
    for &alpha in &cfg.alpha {
        for &t in &cfg.t_grid {
            let rs = cfg.r_rule.at(t);
            let est = ctx.norm_point(alpha, t, &rs, point)?;
            point += 1;
            for ((l2, sob), &r) in est.iter().zip(&rs) {
                let mut pairs = Vec::new();
                if cfg.norm != NormSelection::Sobolev {
                    pairs.push(("l2", l2, stationary_l2_expectation(&ctx.model, alpha, t, r)?));
                }
                if cfg.norm != NormSelection::L2 {
                    pairs.push(("sobolev", sob, stationary_sobolev_expectation(&ctx.model, alpha, t, r)?));
                }
                for (name, e, oracle) in pairs {
                    let z = e.z_score(oracle);
                    assertions.push(Assertion::new(
                        format!("{name} alpha={alpha} t={t} r={r} |z| <= 3"),
                        z.abs() <= 3.0,
                        format!("mc {} ± {} vs oracle {oracle}", e.mean, e.stderr),
                    ));
                    rows.push(OracleRow {
                        norm: name.into(),
                        t,
                        r,
                        alpha,
                        mc_mean: e.mean,
                        mc_stderr: e.stderr,
                        oracle,
                        z_score: z,
                    });
                }
                let defect = derivative_identity_defect(&ctx.model, alpha, t, r)?;
                assertions.push(Assertion::new(
                    format!("dE_sob/dr = -2 E_L2 alpha={alpha} t={t} r={r}"),
                    defect <= 1e-6,
                    format!("relative defect {defect}"),
                ));
            }
        }
    }
    Ok(Outcome { table: Table::Oracle(rows), assertions, extra: json!({}) })
}

/// `Σ λ⁻² e^{−2rλ}` on the unit four-torus.
pub fn d4_sum(r: f64) -> Result<f64> {
    torus_hbar_mellin(4, 2.0, 2.0 * r)
}

/// Lower constant `α²/(2α−1) · 1/(32π²)` of the four-dimensional rate.
pub fn d4_lower_constant(alpha: f64) -> Result<f64> {
    if !(alpha > 0.5) {
        return Err(Error::AlphaOutOfRange { alpha, range: "(1/2, inf)" });
    }
    Ok(alpha * alpha / (2.0 * alpha - 1.0) / (32.0 * PI * PI))
}

fn d4_constant(cfg: &ExperimentConfig) -> Result<Outcome> {
    let kind = cfg.model_kind()?;
    if !matches!(kind, ModelKind::FlatTorus { dim: 4 }) {
        return Err(Error::Config(format!("d4-constant needs model torus4, got {}", kind.label())));
    }
    let RRule::Fixed(rs) = &cfg.r_rule else {
        return Err(Error::Config("d4-constant needs an explicit r grid".into()));
    };
    if rs.is_empty() || rs.iter().any(|r| !(1e-8..=0.1).contains(r)) {
        return Err(Error::Config("d4-constant r grid must lie in [1e-8, 0.1]".into()));
    }
    let limit = 1.0 / (16.0 * PI * PI);
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &r in rs {
        let s = d4_sum(r)?;
        let ratio = s / (1.0 / r).ln();
        ratios.push((r, ratio));
        rows.push(Row {
            experiment: cfg.experiment.to_string(),
            model: kind.label(),
            d: 4,
            alpha: f64::NAN,
            nu: cfg.nu.clone(),
            t: f64::NAN,
            r,
            replicas: 0,
            estimate: s,
            stderr: 0.0,
            renormalized: ratio,
            limit_constant: limit,
            z_score: f64::NAN,
        });
    }
    let tol = cfg.tolerance.unwrap_or(0.10);
    let mut by_r = ratios.clone();
    by_r.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (r_min, at_min) = *by_r.last().expect("nonempty");
    let rel = (at_min / limit - 1.0).abs();
    let mono = by_r.windows(2).all(|p| (p[1].1 - limit).abs() <= (p[0].1 - limit).abs());
    let exact = d4_lower_constant(1.0)?;
    let lower: Vec<_> = cfg
        .alpha
        .iter()
        .filter(|a| **a > 0.5)
        .map(|&a| json!({ "alpha": a, "constant": d4_lower_constant(a).ok() }))
        .collect();
    let assertions = vec![
        Assertion::new(
            format!("ratio at r={r_min} within {tol} of 1/(16 pi^2)"),
            rel <= tol,
            format!("ratio {at_min} vs {limit}, relative error {rel}"),
        ),
        Assertion::new("distance to limit shrinks as r decreases", mono, format!("{by_r:?}")),
        Assertion::new(
            "alpha=1 constant is 1/(32 pi^2)",
            exact == 1.0 / (32.0 * PI * PI),
            format!("{exact}"),
        ),
    ];
    Ok(Outcome { table: Table::Harness(rows), assertions, extra: json!({ "lower_constants": lower }) })
}

fn regularization_gap(cfg: &ExperimentConfig, workers: usize) -> Result<Outcome> {
    let dim = model_dim(cfg)?;
    if dim != 1 {
        return Err(Error::UnsupportedDimension(dim));
    }
    let RRule::Power { beta } = cfg.r_rule else {
        return Err(Error::Config("regularization-gap needs r = t^-beta".into()));
    };
    for &alpha in &cfg.alpha {
        let cap = (2.0 * alpha).min(1.0) / dim as f64;
        if !(beta > 0.0 && beta < cap) {
            return Err(Error::Config(format!("beta = {beta} is outside (0, {cap}) at alpha = {alpha}")));
        }
    }
    let ctx = context(cfg, density_cutoff(dim, rows_min_r(cfg))?, workers)?;
    let oracle_model = if ctx.model.is_torus() {
        Arc::new(SpectralModel::enumerate(ctx.model.kind().clone(), FOUR_PI_SQ * 1e6)?)
    } else {
        ctx.model.clone()
    };
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    let mut point = 0;
    for &alpha in &cfg.alpha {
        let mut trend: Vec<(f64, f64)> = Vec::new();
        for &t in &cfg.t_grid {
            let rs = cfg.r_rule.at(t);
            let v = ctx.gap_values(alpha, t, &rs, point)?;
            point += 1;
            let factor = renormalization(alpha, t);
            for (k, &r) in rs.iter().enumerate() {
                let est = MCEstimate::from_samples(&v.iter().map(|x| x[k]).collect::<Vec<_>>());
                let bound = 16.0 * stationary_l2_integral(&oracle_model, alpha, t, r)?;
                let row = ctx.row(alpha, t, r, &est, factor, factor * bound);
                let slack = factor * bound * (1.0 + 5.0 * est.rel_stderr());
                assertions.push(Assertion::new(
                    format!("alpha={alpha} t={t} r={r} gap below bound"),
                    row.renormalized <= slack,
                    format!("renormalized gap {} vs bound {}", row.renormalized, factor * bound),
                ));
                trend.push((row.renormalized, factor * est.stderr));
                rows.push(row);
            }
        }
        if trend.len() >= 2 {
            let ok = trend.windows(2).all(|p| p[1].0 <= p[0].0 + 2.0 * p[0].1.hypot(p[1].1));
            let values: Vec<f64> = trend.iter().map(|p| p.0).collect();
            assertions.push(Assertion::new(
                format!("alpha={alpha} renormalized gap nonincreasing in t"),
                ok,
                format!("{values:?}"),
            ));
        }
    }
    Ok(Outcome { table: Table::Harness(rows), assertions, extra: json!({}) })
}

pub const FLUCTUATION_MIN_REPLICAS: usize = 5000;

fn fluctuation(cfg: &ExperimentConfig, workers: usize) -> Result<Outcome> {
    if cfg.replicas < FLUCTUATION_MIN_REPLICAS {
        return Err(Error::InsufficientReplicas { got: cfg.replicas, need: FLUCTUATION_MIN_REPLICAS });
    }
    let RRule::Fixed(rs) = &cfg.r_rule else {
        return Err(Error::Config("fluctuation needs an explicit r list".into()));
    };
    let dim = model_dim(cfg)?;
    let ctx = context(cfg, density_cutoff(dim, rows_min_r(cfg))?, workers)?;
    let slope_tol = cfg.slope_tol.unwrap_or(0.1);
    let mut rows = Vec::new();
    let mut assertions = Vec::new();
    let mut extra = Vec::new();
    let mut point = 0;
    for &alpha in &cfg.alpha {
        let (mut lt, mut lm) = (Vec::new(), Vec::new());
        let mut halving = Vec::new();
        let mut tails = Vec::new();
        let mut certain = true;
        for &t in &cfg.t_grid {
            let v = ctx.sup_values(alpha, t, rs, point)?;
            point += 1;
            let factor = renormalization(alpha, t);
            let mut means = Vec::new();
            for (k, &r) in rs.iter().enumerate() {
                let xs: Vec<f64> = v.iter().map(|x| x[k]).collect();
                let est = MCEstimate::from_samples(&xs);
                let mut row = ctx.row(alpha, t, r, &est, factor.sqrt(), f64::NAN);
                row.z_score = f64::NAN;
                rows.push(row);
                means.push(est.mean);
                if k == 0 {
                    lt.push(t.ln());
                    lm.push(est.mean.ln());
                    let n = xs.len() as f64;
                    let probs: Vec<f64> =
                        cfg.eta.iter().map(|&e| xs.iter().filter(|&&x| x >= e).count() as f64 / n).collect();
                    for (e, p) in cfg.eta.iter().zip(&probs) {
                        if *e == 0.0 && *p != 1.0 {
                            certain = false;
                        }
                    }
                    let (x2, lp): (Vec<f64>, Vec<f64>) = cfg
                        .eta
                        .iter()
                        .zip(&probs)
                        .filter(|(e, p)| **e > 0.0 && **p > 0.0)
                        .map(|(e, p)| (e * e, p.ln()))
                        .unzip();
                    let fit = (x2.len() >= 2).then(|| linear_fit(&x2, &lp));
                    tails.push(json!({
                        "t": t,
                        "eta": cfg.eta,
                        "probability": probs,
                        "slope": fit.map(|f| f.slope),
                        "r_squared": fit.map(|f| f.r_squared),
                    }));
                }
            }
            if rs.len() >= 2 {
                halving.push(json!({ "t": t, "r": [rs[0], rs[1]], "ratio": means[1] / means[0] }));
            }
        }
        if lt.len() >= 2 {
            let fit = linear_fit(&lt, &lm);
            assertions.push(Assertion::new(
                format!("alpha={alpha} r={} slope -0.5 ± {slope_tol}", rs[0]),
                (fit.slope + 0.5).abs() <= slope_tol,
                format!("fitted {} (stderr {})", fit.slope, fit.slope_stderr),
            ));
        }
        if cfg.eta.contains(&0.0) {
            assertions.push(Assertion::new(format!("alpha={alpha} P(sup >= 0) = 1"), certain, String::new()));
        }
        extra.push(json!({ "alpha": alpha, "halving": halving, "tails": tails }));
    }
    Ok(Outcome { table: Table::Harness(rows), assertions, extra: json!({ "fluctuation": extra }) })
}

fn random_measure(rng: &mut rand_chacha::ChaCha8Rng) -> Result<DiscreteMeasure1D> {
    let n = rng.random_range(1..=6);
    let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = w.iter().sum();
    DiscreteMeasure1D::new(x, w.iter().map(|v| v / s).collect())
}

fn transport_selftest(cfg: &ExperimentConfig, workers: usize) -> Result<Outcome> {
    let mut assertions = Vec::new();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lp_max: f64 = 0.0;
    for _ in 0..200 {
        let (a, b) = (random_measure(&mut rng)?, random_measure(&mut rng)?);
        lp_max = lp_max.max((w2_lp_bruteforce(&a, &b)? - w2_circle_exact(&a, &b)?).abs());
    }
    assertions.push(Assertion::new("exact circle OT matches LP on 200 instances", lp_max <= 1e-9, format!("max diff {lp_max}")));

    let n = cfg.grid;
    let opts = SinkhornOptions { epsilon: cfg.epsilon, ..SinkhornOptions::default() };
    let c = |x: f64| (2.0 * PI * x).cos();
    let s = |x: f64| (2.0 * PI * x).sin();
    type Density = Box<dyn Fn(&[f64]) -> f64>;
    let cases: Vec<(&str, Density, Density)> = vec![
        ("cosine", Box::new(|_| 1.0), Box::new(move |x| 1.0 + 0.5 * c(x[0]))),
        (
            "product",
            Box::new(move |x| (1.0 + 0.3 * c(x[0])) * (1.0 + 0.2 * s(x[1]))),
            Box::new(move |x| (1.0 + 0.5 * s(x[0])) * (1.0 + 0.2 * s(x[1]))),
        ),
    ];
    let mut sinkhorn = Vec::new();
    for (name, fa, fb) in &cases {
        let a = PeriodicGridMeasure::from_fn(2, n, fa)?;
        let b = PeriodicGridMeasure::from_fn(2, n, fb)?;
        let res = sinkhorn_divergence(&a, &b, &opts)?;
        let exact = w2_circle_quantiles(
            &CircleQuantile::from_cell_masses(&a.marginal(0))?,
            &CircleQuantile::from_cell_masses(&b.marginal(0))?,
        );
        let rel = (res.divergence / exact - 1.0).abs();
        assertions.push(Assertion::new(
            format!("sinkhorn {name} within 5% of 1-D exact"),
            rel <= 0.05,
            format!("divergence {} vs exact {exact}", res.divergence),
        ));
        sinkhorn.push(json!({ "case": name, "divergence": res.divergence, "exact": exact, "relative_error": rel,
            "iterations": res.iterations, "violation": res.violation }));
    }

    let dim = model_dim(cfg)?;
    if dim != 1 {
        return Err(Error::UnsupportedDimension(dim));
    }
    let t = *cfg.t_grid.first().ok_or_else(|| Error::Config("transport-selftest needs a horizon".into()))?;
    let r = cfg.r_rule.at(t)[0];
    let alpha = cfg.alpha[0];
    let ctx = context(cfg, density_cutoff(1, r)?, workers)?;
    let checks = ctx.coefficient_samples(alpha, t, 0, |m| {
        let s = w2_upper_surrogate(m, r)?;
        let w = w2_to_uniform(&CircleQuantile::from_cell_masses(&m.regularized(r)?.cell_masses(CELLS)?)?);
        Ok((w, s.bound, s.log_mean_bound))
    })?;
    let violations = checks.iter().filter(|c| c.0 > c.1).count();
    let log_violations = checks.iter().filter(|c| c.0 > c.2).count();
    assertions.push(Assertion::new(
        format!("surrogate bound holds on {} regularized samples", checks.len()),
        violations == 0,
        format!("{violations} violations"),
    ));

    let log_mean = log_mean_fluctuation_check(&[0.1, 0.3, 0.5], &[0.01, 0.1, 0.3], &[1.0, 2.0, 4.0], 4096)?;
    assertions.push(Assertion::new("log-mean fluctuation constants", log_mean.passed, format!("{:?}", log_mean.fitted_c)));
    let a = DiscreteMeasure1D::new(vec![0.1, 0.4, 0.8], vec![0.5, 0.3, 0.2])?;
    let b = DiscreteMeasure1D::new(vec![0.25, 0.6], vec![0.6, 0.4])?;
    let heat = heat_flow_contraction_check(&a, Some(&b), &[1e-4, 1e-3, 1e-2, 5e-2])?;
    assertions.push(Assertion::new(
        "heat flow displacement and contraction",
        heat.displacement_ok && heat.contraction_ok,
        format!("fitted c {}", heat.fitted_c),
    ));

    let extra = json!({
        "lp": { "instances": 200, "max_abs_diff": lp_max },
        "sinkhorn": { "grid": n, "epsilon": cfg.epsilon, "cases": sinkhorn },
        "surrogate": {
            "model": ctx.label(), "alpha": alpha, "t": t, "r": r, "samples": checks.len(),
            "violations": violations, "log_mean_violations": log_violations,
            "max_ratio": checks.iter().map(|c| c.0 / c.1).fold(0.0, f64::max),
        },
        "log_mean": log_mean,
        "heat_flow": heat,
    });
    Ok(Outcome { table: Table::None, assertions, extra })
}

fn spectral_table(cfg: &ExperimentConfig) -> Result<Outcome> {
    let kind = cfg.model_kind()?;
    let lambda_max = cfg.lambda_max.ok_or_else(|| Error::Config("spectral-table needs lambda_max".into()))?;
    let model = SpectralModel::enumerate(kind, lambda_max)?;
    let rows: Vec<SpectralRow> = model
        .modes()?
        .iter()
        .map(|m| {
            let (wavevector, parity) = match &m.shape {
                ModeShape::Fourier { wave, parity } => (
                    format!("({})", wave.components().iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ")),
                    parity.to_string(),
                ),
                ModeShape::Grid { .. } => ("-".into(), "grid".into()),
            };
            SpectralRow { index: m.index, lambda: m.eigenvalue, wavevector, parity }
        })
        .collect();
    let mut extra = json!({ "model": model.kind().label(), "lambda_max": lambda_max, "modes": rows.len() });
    if let Some(theta) = cfg.sums {
        let big = if model.is_torus() {
            SpectralModel::enumerate(model.kind().clone(), required_cutoff(model.dim(), theta, 1e-3, 1, TAIL_TOL)?)?
        } else {
            model.clone()
        };
        let mut sums = Vec::new();
        for k in 0..=6 {
            let r = 10f64.powf(-3.0 + 0.5 * k as f64);
            sums.push(json!({
                "r": r,
                "hbar": big.spectral_sum_h(theta, r, SumPoint::Mean).ok(),
                "g": big.spectral_sum_g(theta, r).ok(),
                "trace_ratio": big.trace_asymptotic_ratio(r).ok(),
            }));
        }
        extra["sums"] = json!({ "theta": theta, "rows": sums });
    }
    Ok(Outcome { table: Table::Spectral(rows), assertions: Vec::new(), extra })
}

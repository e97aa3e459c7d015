//! Flat `key = value` experiment configuration.

use crate::diffusion::InitialLaw;
use crate::error::{Error, Result};
use crate::spectral::ModelKind;
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

/// Environment variable capping the worker count.
pub const WORKERS_ENV: &str = "ERGOFLOW_WORKERS";

pub const DEFAULT_SEED: u64 = 20_261_014;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Limits,
    Scaling,
    OracleCheck,
    D4Constant,
    RegularizationGap,
    Fluctuation,
    TransportSelftest,
    SpectralTable,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        Self::Limits,
        Self::Scaling,
        Self::OracleCheck,
        Self::D4Constant,
        Self::RegularizationGap,
        Self::Fluctuation,
        Self::TransportSelftest,
        Self::SpectralTable,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Limits => "limits",
            Self::Scaling => "scaling",
            Self::OracleCheck => "oracle-check",
            Self::D4Constant => "d4-constant",
            Self::RegularizationGap => "regularization-gap",
            Self::Fluctuation => "fluctuation",
            Self::TransportSelftest => "transport-selftest",
            Self::SpectralTable => "spectral-table",
        }
    }

    /// Experiments that write Monte Carlo rows.
    pub fn is_monte_carlo(&self) -> bool {
        !matches!(self, Self::D4Constant | Self::SpectralTable)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// How the smoothing time depends on the horizon.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum RRule {
    /// Every listed `r` at every horizon.
    Fixed(Vec<f64>),
    /// `r = t^{-β}`.
    Power { beta: f64 },
}

impl RRule {
    pub fn at(&self, t: f64) -> Vec<f64> {
        match self {
            RRule::Fixed(rs) => rs.clone(),
            RRule::Power { beta } => vec![t.powf(-beta)],
        }
    }

    /// Smallest `r` used over the horizons.
    pub fn min_over(&self, ts: &[f64]) -> f64 {
        ts.iter().flat_map(|&t| self.at(t)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormSelection {
    L2,
    Sobolev,
    Both,
}

impl FromStr for NormSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "l2" => Ok(Self::L2),
            "sobolev" => Ok(Self::Sobolev),
            "both" => Ok(Self::Both),
            _ => Err(Error::Config(format!("unknown norm '{s}', expected l2, sobolev or both"))),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: String,
    pub lambda_max: Option<f64>,
    pub alpha: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub r_rule: RRule,
    pub nu: String,
    pub replicas: usize,
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub json: Option<PathBuf>,
    /// Largest time cell of the quadrature grid.
    pub max_step: f64,
    /// Explicit quadrature node count, overriding `max_step`.
    pub samples: Option<usize>,
    /// Occupation histogram bins on the circle.
    pub bins: usize,
    /// Periodic grid resolution per axis for Sinkhorn.
    pub grid: usize,
    pub epsilon: f64,
    pub tolerance: Option<f64>,
    pub slope_tol: Option<f64>,
    pub norm: NormSelection,
    pub eta: Vec<f64>,
    /// Sup-norm evaluation grid per axis.
    pub resolution: usize,
    /// Order `θ` of the spectral-sum tables added to a spectral table.
    pub sums: Option<f64>,
}

fn geometric_grid(start: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start * 2f64.powi(k as i32)).collect()
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut c = Self {
            experiment: kind,
            model: "torus1".into(),
            lambda_max: None,
            alpha: vec![1.0],
            t_grid: vec![400.0],
            r_rule: RRule::Fixed(vec![0.01]),
            nu: "stationary".into(),
            replicas: 1000,
            seed: DEFAULT_SEED,
            workers: None,
            out: None,
            json: None,
            max_step: 1e-3,
            samples: None,
            bins: 4096,
            grid: 64,
            epsilon: 1e-3,
            tolerance: None,
            slope_tol: None,
            norm: NormSelection::Sobolev,
            eta: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            resolution: 512,
            sums: None,
        };
        match kind {
            ExperimentKind::Limits => {
                c.replicas = 2000;
                c.max_step = 5e-4;
                c.bins = 1 << 18;
            }
            ExperimentKind::Scaling => {
                c.t_grid = geometric_grid(25.0, 5);
                c.replicas = 200;
                c.max_step = 2e-3;
            }
            ExperimentKind::OracleCheck => {
                c.alpha = vec![0.5, 0.75, 1.0];
                c.t_grid = vec![50.0, 200.0];
                c.r_rule = RRule::Fixed(vec![0.01, 0.05]);
                c.replicas = 400;
                c.norm = NormSelection::Both;
            }
            ExperimentKind::D4Constant => {
                c.model = "torus4".into();
                c.t_grid = Vec::new();
                c.r_rule = RRule::Fixed(vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6]);
                c.replicas = 0;
            }
            ExperimentKind::RegularizationGap => {
                c.t_grid = vec![100.0, 400.0];
                c.r_rule = RRule::Power { beta: 0.5 };
                c.replicas = 200;
                c.bins = 1 << 16;
            }
            ExperimentKind::Fluctuation => {
                c.t_grid = vec![50.0, 200.0, 800.0];
                c.r_rule = RRule::Fixed(vec![0.05, 0.025]);
                c.replicas = 5000;
                c.max_step = 4e-3;
            }
            ExperimentKind::TransportSelftest => {
                c.t_grid = vec![100.0];
                c.r_rule = RRule::Fixed(vec![0.05]);
                c.replicas = 100;
                c.grid = 128;
            }
            ExperimentKind::SpectralTable => {
                c.model = "torus2".into();
                c.t_grid = Vec::new();
                c.replicas = 0;
                c.lambda_max = Some(crate::spectral::FOUR_PI_SQ * 2.0 + 1.0);
            }
        }
        c
    }

    /// Defaults overridden by the lines of a config file.
    pub fn parse(kind: ExperimentKind, text: &str) -> Result<Self> {
        let mut c = Self::defaults(kind);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            c.set(key.trim(), value.trim()).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(c)
    }

    pub fn from_file(kind: ExperimentKind, path: &std::path::Path) -> Result<Self> {
        Self::parse(kind, &std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config(format!("bad value '{v}' for '{key}'")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<f64>> {
            v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
        }
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "experiment" => {
                let k: ExperimentKind = value.parse()?;
                if k != self.experiment {
                    return Err(Error::Config(format!("file is for '{k}', running '{}'", self.experiment)));
                }
            }
            "model" => self.model = value.to_string(),
            "lambda_max" => self.lambda_max = Some(num(key, value)?),
            "alpha" => self.alpha = list(key, value)?,
            "t" | "t_grid" => self.t_grid = list(key, value)?,
            "r" => self.r_rule = RRule::Fixed(list(key, value)?),
            "beta" => self.r_rule = RRule::Power { beta: num(key, value)? },
            "nu" => self.nu = value.to_string(),
            "replicas" => self.replicas = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "workers" => self.workers = Some(num(key, value)?),
            "out" => self.out = path(value),
            "json" => self.json = path(value),
            "max_step" => self.max_step = num(key, value)?,
            "samples" => self.samples = Some(num::<f64>(key, value)? as usize),
            "bins" => self.bins = num(key, value)?,
            "grid" => self.grid = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "tolerance" => self.tolerance = Some(num(key, value)?),
            "slope_tol" => self.slope_tol = Some(num(key, value)?),
            "norm" => self.norm = value.parse()?,
            "eta" => self.eta = list(key, value)?,
            "resolution" => self.resolution = num(key, value)?,
            "sums" => self.sums = Some(num(key, value)?),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        ModelKind::parse(&self.model)
    }

    pub fn initial_law(&self) -> Result<InitialLaw> {
        InitialLaw::parse(&self.nu)
    }

    /// Configured workers capped by `ERGOFLOW_WORKERS`.
    pub fn effective_workers(&self) -> usize {
        let base = self.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let cap = std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
        cap.map_or(base, |c| base.min(c)).max(1)
    }

    /// Checks that do not need the spectral model.
    pub fn validate(&self) -> Result<()> {
        if self.t_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("t grid must be strictly ascending".into()));
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::Config("alpha must list positive exponents".into()));
        }
        if let RRule::Fixed(rs) = &self.r_rule {
            if rs.iter().any(|r| !(*r > 0.0)) {
                return Err(Error::Config("r values must be positive".into()));
            }
        }
        if self.experiment.is_monte_carlo() && self.replicas < 100 {
            return Err(Error::InsufficientReplicas { got: self.replicas, need: 100 });
        }
        if !(self.max_step > 0.0) {
            return Err(Error::Config("max_step must be positive".into()));
        }
        Ok(())
    }

    /// Canonical `key=value` lines of every setting that affects results.
    pub fn canonical(&self) -> String {
        let mut m = BTreeMap::new();
        let fl = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        m.insert("experiment", self.experiment.to_string());
        m.insert("model", self.model.trim().to_string());
        m.insert("lambda_max", self.lambda_max.map_or("auto".into(), |v| format!("{v:?}")));
        m.insert("alpha", fl(&self.alpha));
        m.insert("t", fl(&self.t_grid));
        m.insert(
            "r",
            match &self.r_rule {
                RRule::Fixed(rs) => fl(rs),
                RRule::Power { beta } => format!("t^-{beta:?}"),
            },
        );
        m.insert("nu", self.nu.trim().to_string());
        m.insert("replicas", self.replicas.to_string());
        m.insert("seed", self.seed.to_string());
        m.insert("max_step", format!("{:?}", self.max_step));
        m.insert("samples", self.samples.map_or("auto".into(), |s| s.to_string()));
        m.insert("bins", self.bins.to_string());
        m.insert("grid", self.grid.to_string());
        m.insert("epsilon", format!("{:?}", self.epsilon));
        m.insert("tolerance", self.tolerance.map_or("default".into(), |v| format!("{v:?}")));
        m.insert("slope_tol", self.slope_tol.map_or("default".into(), |v| format!("{v:?}")));
        m.insert("norm", format!("{:?}", self.norm).to_lowercase());
        m.insert("eta", fl(&self.eta));
        m.insert("resolution", self.resolution.to_string());
        m.insert("sums", self.sums.map_or("none".into(), |v| format!("{v:?}")));
        m.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// FNV-1a over the canonical form.
    pub fn hash(&self) -> u64 {
        fnv1a(self.canonical().as_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

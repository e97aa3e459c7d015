use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported torus dimension {0}, expected 1 to 4")]
    UnsupportedDimension(usize),

    #[error("eigenvalue cutoff {cutoff} is below the spectral gap {gap}")]
    CutoffBelowGap { cutoff: f64, gap: f64 },

    #[error("spectral tail bound {tail:e} exceeds {tol:e} at cutoff {cutoff}; raise the cutoff")]
    InsufficientCutoff { cutoff: f64, tail: f64, tol: f64 },

    #[error("mode list would hold {count} modes, above the cap of {cap}")]
    TooManyModes { count: u64, cap: u64 },

    #[error("mode list is not materialized for this model")]
    ModesUnavailable,

    #[error("mode index {index} out of range, the model has {count} modes")]
    ModeIndex { index: usize, count: usize },

    #[error("potential is not periodic: V(0) = {start}, V(1) = {end}")]
    NonPeriodicPotential { start: f64, end: f64 },

    #[error("{0} is only defined on flat tori")]
    TorusOnly(&'static str),

    #[error("horizon {t} is below the spectral time scale {t_min}")]
    HorizonTooShort { t: f64, t_min: f64 },

    #[error("invalid initial density: {0}")]
    InvalidDensity(String),

    #[error("rejection envelope {envelope} exceeded by density value {value}")]
    EnvelopeViolated { envelope: f64, value: f64 },

    #[error("measure has no atoms")]
    EmptySupport,

    #[error("weights sum to {0}, expected 1")]
    NotNormalized(f64),

    #[error("problem size {size} exceeds the cap {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("sinkhorn stopped after {iterations} iterations with marginal violation {violation:e}")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("entropic parameter {0} is below the supported floor")]
    KernelUnderflow(f64),

    #[error("density is not bounded below on the grid (minimum {0:e})")]
    NonPositiveDensity(f64),

    #[error("need at least {need} replicas, got {got}")]
    InsufficientReplicas { got: usize, need: usize },

    #[error("grid resolution {got} is below the Nyquist safeguard {need}")]
    ResolutionTooLow { got: usize, need: usize },

    #[error("exponent {alpha} is outside the admissible range {range}")]
    AlphaOutOfRange { alpha: f64, range: &'static str },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

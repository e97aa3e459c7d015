use ergoflow::harness::{self, ExperimentConfig, ExperimentKind};
use ergoflow::spectral::{ModelKind, SpectralModel};
use ergoflow::transport::{self, DiscreteMeasure1D};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: ergoflow::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn measure(atoms: Vec<f64>, weights: Vec<f64>) -> PyResult<DiscreteMeasure1D> {
    DiscreteMeasure1D::new(atoms, weights).map_err(err)
}

/// Runs one experiment from `key = value` config text; returns `(csv, json, passed)`.
#[pyfunction]
#[pyo3(signature = (experiment, config = "", workers = None))]
fn run_experiment(py: Python<'_>, experiment: &str, config: &str, workers: Option<usize>) -> PyResult<(String, String, bool)> {
    let kind: ExperimentKind = experiment.parse().map_err(err)?;
    let cfg = ExperimentConfig::parse(kind, config).map_err(err)?;
    let workers = workers.unwrap_or_else(|| cfg.effective_workers());
    let rec = py.detach(|| harness::run_with_workers(&cfg, workers)).map_err(err)?;
    let json = serde_json::to_string(&rec).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((rec.csv(), json, rec.all_passed()))
}

#[pyfunction]
fn lemma31_integral(alpha: f64, y: f64) -> PyResult<f64> {
    ergoflow::special::lemma31_integral(alpha, y).map_err(err)
}

/// Limit constant of the renormalized `W₂²` for a model label such as `torus1`.
#[pyfunction]
#[pyo3(signature = (model, alpha, nu = "stationary", lambda_max = 4000.0))]
fn limit_constant(model: &str, alpha: f64, nu: &str, lambda_max: f64) -> PyResult<f64> {
    let m = SpectralModel::enumerate(ModelKind::parse(model).map_err(err)?, lambda_max).map_err(err)?;
    let nu = ergoflow::diffusion::InitialLaw::parse(nu).map_err(err)?;
    Ok(ergoflow::norms::limit_constant(&m, alpha, &nu).map_err(err)?.value)
}

#[pyfunction]
fn torus_trace_ratio(dim: usize, s: f64) -> PyResult<f64> {
    ergoflow::spectral::torus_trace_ratio(dim, s).map_err(err)
}

/// Exact `W₂²` on the circle between two weighted atom sets.
#[pyfunction]
fn w2_circle(a_atoms: Vec<f64>, a_weights: Vec<f64>, b_atoms: Vec<f64>, b_weights: Vec<f64>) -> PyResult<f64> {
    transport::w2_circle_exact(&measure(a_atoms, a_weights)?, &measure(b_atoms, b_weights)?).map_err(err)
}

#[pyfunction]
fn w2_to_uniform(atoms: Vec<f64>, weights: Vec<f64>) -> PyResult<f64> {
    transport::w2_discrete_to_uniform(&measure(atoms, weights)?).map_err(err)
}

/// `(index, lambda)` pairs of the modes below `lambda_max`.
#[pyfunction]
fn spectrum(model: &str, lambda_max: f64) -> PyResult<Vec<(usize, f64)>> {
    let m = SpectralModel::enumerate(ModelKind::parse(model).map_err(err)?, lambda_max).map_err(err)?;
    Ok(m.modes().map_err(err)?.iter().map(|x| (x.index, x.eigenvalue)).collect())
}

#[pymodule]
fn pyergoflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(lemma31_integral, m)?)?;
    m.add_function(wrap_pyfunction!(limit_constant, m)?)?;
    m.add_function(wrap_pyfunction!(torus_trace_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(w2_circle, m)?)?;
    m.add_function(wrap_pyfunction!(w2_to_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    Ok(())
}

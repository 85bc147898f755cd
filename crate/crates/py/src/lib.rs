//! Python bindings: `import unlearn_lab`.
//!
//! Structured results (calibrations, run summaries, verification reports)
//! cross the boundary as JSON strings with the same schema the CLI writes.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde_json::Value;
use unlearn_core::certify::{self, FormulaVariant, Moment, PrivacyBudget, Regime, SensitivityBound};
use unlearn_core::data_engine::{Dataset, UnlearnRequest};
use unlearn_core::experiment::{self, CalibrateInput, Overrides, RunOptions, Suite, VerifyOptions};
use unlearn_core::model_zoo::{self, LossFamily, LossSpec, ProjectionSet};
use unlearn_core::sgd_engine::{run_coupled_triple, CoupledRun};
use unlearn_core::Error;

create_exception!(unlearn_lab, UnlearnError, PyException);
create_exception!(unlearn_lab, ConfigError, UnlearnError);
create_exception!(unlearn_lab, CertificationError, UnlearnError);
create_exception!(unlearn_lab, DivergenceError, UnlearnError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Certification(_) => CertificationError::new_err(msg),
        Error::NumericDivergence { .. } => DivergenceError::new_err(msg),
        Error::Config(_) | Error::Domain(_) | Error::Json(_) | Error::Csv(_) => ConfigError::new_err(msg),
        _ => UnlearnError::new_err(msg),
    }
}

/// Parses a snake_case enum name (`"strongly_convex"`, `"main"`, ...).
fn parse_name<T: serde::de::DeserializeOwned>(what: &str, name: &str) -> PyResult<T> {
    serde_json::from_value(Value::String(name.to_string()))
        .map_err(|_| ConfigError::new_err(format!("unknown {what} {name:?}")))
}

fn family(name: &str, lam: Option<f64>) -> PyResult<LossFamily> {
    match (name, lam) {
        ("ridge_logistic", Some(lambda)) => Ok(LossFamily::RidgeLogistic { lambda }),
        ("ridge_logistic", None) => Err(ConfigError::new_err("ridge_logistic needs lam")),
        (_, Some(_)) => Err(ConfigError::new_err("lam applies to ridge_logistic only")),
        ("quadratic", None) => Ok(LossFamily::Quadratic),
        ("logistic", None) => Ok(LossFamily::Logistic),
        ("smooth_nonconvex", None) => Ok(LossFamily::SmoothNonconvex),
        (other, None) => Err(ConfigError::new_err(format!("unknown loss family {other:?}"))),
    }
}

/// Certified constants of a loss family on a data domain.
#[pyclass(name = "LossSpec", frozen)]
struct PyLossSpec {
    inner: LossSpec,
}

#[pymethods]
impl PyLossSpec {
    #[new]
    #[pyo3(signature = (family_name, dimension, data_radius, projection_radius=None, theta0=None, lam=None))]
    fn new(
        family_name: &str,
        dimension: usize,
        data_radius: f64,
        projection_radius: Option<f64>,
        theta0: Option<Vec<f64>>,
        lam: Option<f64>,
    ) -> PyResult<Self> {
        let fam = family(family_name, lam)?;
        let ball = projection_radius.map(|r| ProjectionSet::centered(dimension, r)).transpose().map_err(to_py)?;
        let theta0 = theta0.unwrap_or_else(|| vec![0.0; dimension]);
        let inner = model_zoo::certified_constants(fam, dimension, data_radius, ball.as_ref(), &theta0).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.name()
    }
    #[getter]
    fn smoothness(&self) -> f64 {
        self.inner.smoothness
    }
    #[getter]
    fn strong_convexity(&self) -> f64 {
        self.inner.strong_convexity
    }
    /// `inf` without a projection set for families with unbounded gradients.
    #[getter]
    fn grad_bound(&self) -> f64 {
        self.inner.grad_bound
    }
    #[getter]
    fn noise_b(&self) -> f64 {
        self.inner.noise_b
    }
    #[getter]
    fn noise_c(&self) -> f64 {
        self.inner.noise_c
    }
    #[getter]
    fn loss_at_init(&self) -> f64 {
        self.inner.loss_at_init
    }
    #[getter]
    fn convexity_class(&self) -> String {
        serde_json::to_value(self.inner.convexity_class)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }

    #[pyo3(signature = (x, theta, y=0.0))]
    fn loss(&self, x: Vec<f64>, theta: Vec<f64>, y: f64) -> PyResult<f64> {
        model_zoo::eval_loss(&self.inner, &model_zoo::Sample::new(x, y), &theta).map_err(to_py)
    }

    #[pyo3(signature = (x, theta, y=0.0))]
    fn grad(&self, x: Vec<f64>, theta: Vec<f64>, y: f64) -> PyResult<Vec<f64>> {
        model_zoo::eval_grad(&self.inner, &model_zoo::Sample::new(x, y), &theta).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "LossSpec(family={}, L={}, mu={}, G={}, B={}, C={})",
            s.family.name(),
            s.smoothness,
            s.strong_convexity,
            s.grad_bound,
            s.noise_b,
            s.noise_c
        )
    }
}

/// A sensitivity bound and the moment it controls.
#[pyclass(name = "SensitivityBound", frozen)]
struct PySensitivityBound {
    inner: SensitivityBound,
}

#[pymethods]
impl PySensitivityBound {
    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }
    #[getter]
    fn moment(&self) -> &'static str {
        match self.inner.moment {
            Moment::First => "first",
            Moment::Second => "second",
        }
    }
    fn noise_std(&self, epsilon: f64, delta: f64) -> PyResult<f64> {
        let budget = PrivacyBudget::new(epsilon, delta).map_err(to_py)?;
        Ok(certify::calibrate_noise(&self.inner, &budget).map_err(to_py)?.std)
    }
    fn tail_radius(&self, delta: f64) -> f64 {
        certify::tail_radius(&self.inner, delta)
    }
    fn __repr__(&self) -> String {
        format!("SensitivityBound(sigma={}, moment={})", self.inner.sigma, self.moment())
    }
}

#[pyfunction]
#[pyo3(signature = (regime, eta, smoothness, mu, grad_bound, n, m, t, k, variant="appendix"))]
#[allow(clippy::too_many_arguments)]
fn sigma_psgd_r2d(
    regime: &str,
    eta: f64,
    smoothness: f64,
    mu: f64,
    grad_bound: f64,
    n: usize,
    m: usize,
    t: u64,
    k: u64,
    variant: &str,
) -> PyResult<PySensitivityBound> {
    let regime: Regime = parse_name("regime", regime)?;
    let variant: FormulaVariant = parse_name("variant", variant)?;
    let inner = certify::sigma_psgd_r2d(regime, eta, smoothness, mu, grad_bound, n, m, t, k, variant).map_err(to_py)?;
    Ok(PySensitivityBound { inner })
}

#[pyfunction]
#[pyo3(signature = (regime, eta, smoothness, mu, noise_b, noise_c, loss_at_init, n, m, t, k, variant="appendix"))]
#[allow(clippy::too_many_arguments)]
fn sigma_sgd_r2d(
    regime: &str,
    eta: f64,
    smoothness: f64,
    mu: f64,
    noise_b: f64,
    noise_c: f64,
    loss_at_init: f64,
    n: usize,
    m: usize,
    t: u64,
    k: u64,
    variant: &str,
) -> PyResult<PySensitivityBound> {
    let regime: Regime = parse_name("regime", regime)?;
    let variant: FormulaVariant = parse_name("variant", variant)?;
    let inner = certify::sigma_sgd_r2d(regime, eta, smoothness, mu, noise_b, noise_c, loss_at_init, n, m, t, k, variant)
        .map_err(to_py)?;
    Ok(PySensitivityBound { inner })
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn sigma_sgd_d2d(
    eta: f64,
    smoothness: f64,
    mu: f64,
    noise_b: f64,
    noise_c: f64,
    n: usize,
    m: usize,
    k: u64,
) -> PyResult<PySensitivityBound> {
    let inner = certify::sigma_sgd_d2d(eta, smoothness, mu, noise_b, noise_c, n, m, k).map_err(to_py)?;
    Ok(PySensitivityBound { inner })
}

/// Training steps `T` for descent-based unlearning with `K` unlearning steps.
#[pyfunction]
fn d2d_training_horizon(k: u64, eta: f64, mu: f64, noise_b: f64, noise_c: f64, loss_at_init: f64) -> PyResult<u64> {
    Ok(certify::d2d_training_horizon(k, eta, mu, noise_b, noise_c, loss_at_init).map_err(to_py)?.t)
}

#[pyfunction]
#[pyo3(signature = (target, eta, mu, grad_bound, n, m, t, variant="appendix"))]
#[allow(clippy::too_many_arguments)]
fn k_for_sigma(target: f64, eta: f64, mu: f64, grad_bound: f64, n: usize, m: usize, t: u64, variant: &str) -> PyResult<u64> {
    let variant: FormulaVariant = parse_name("variant", variant)?;
    certify::k_for_sigma(target, eta, mu, grad_bound, n, m, t, variant).map_err(to_py)
}

#[pyfunction]
fn gaussian_privacy_curve(sensitivity: f64, sigma: f64, epsilon: f64) -> f64 {
    certify::gaussian_privacy_curve(sensitivity, sigma, epsilon)
}

/// Calibration from a config or explicit-constant request (JSON text); returns JSON.
#[pyfunction]
#[pyo3(signature = (config_json, variant=None))]
fn calibrate(config_json: &str, variant: Option<&str>) -> PyResult<String> {
    let input = CalibrateInput::from_json(config_json).map_err(to_py)?;
    let variant = variant.map(|v| parse_name::<FormulaVariant>("variant", v)).transpose()?;
    let cal = experiment::cmd_calibrate(&input, &Overrides { variant, ..Default::default() }).map_err(to_py)?;
    serde_json::to_string(&cal).map_err(|e| to_py(e.into()))
}

/// Learn, retrain and unlearn trajectories of one replica.
#[pyclass(name = "CoupledRun", frozen)]
struct PyCoupledRun {
    inner: CoupledRun,
}

#[pymethods]
impl PyCoupledRun {
    #[getter]
    fn learn_final(&self) -> Vec<f64> {
        self.inner.learn.final_iterate.clone()
    }
    #[getter]
    fn retrain_final(&self) -> Vec<f64> {
        self.inner.retrain.final_iterate.clone()
    }
    #[getter]
    fn unlearn_final(&self) -> Vec<f64> {
        self.inner.unlearn.final_iterate.clone()
    }
    #[getter]
    fn checkpoint(&self) -> Option<Vec<f64>> {
        self.inner.learn.checkpoint.clone()
    }
    /// `‖θ_t − θ′_t‖` for `t = 0..=T`.
    #[getter]
    fn dist_train_retrain(&self) -> Vec<f64> {
        self.inner.dist_train_retrain.clone()
    }
    #[getter]
    fn dist_final(&self) -> f64 {
        self.inner.dist_final
    }
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| to_py(e.into()))
    }
}

/// Runs one coupled replica of an experiment config (JSON text).
#[pyfunction]
#[pyo3(signature = (config_json, replica=0))]
fn run_coupled(py: Python<'_>, config_json: &str, replica: u64) -> PyResult<PyCoupledRun> {
    let cfg = experiment::ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let p = cfg.prepare().map_err(to_py)?;
    let inner = py
        .detach(|| run_coupled_triple(&p.run, &p.dataset, &p.request, &p.spec, replica))
        .map_err(to_py)?;
    Ok(PyCoupledRun { inner })
}

/// `run` with the CLI's output files; returns the summary JSON.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir, coupled=false, seed=None, replicas=None))]
fn run(
    py: Python<'_>,
    config_json: &str,
    out_dir: PathBuf,
    coupled: bool,
    seed: Option<u64>,
    replicas: Option<usize>,
) -> PyResult<String> {
    let cfg = experiment::ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let ov = Overrides { seed, replicas, variant: None };
    let opts = RunOptions { coupled, out_dir };
    let summary = py.detach(|| experiment::cmd_run(&cfg, &ov, &opts)).map_err(to_py)?;
    serde_json::to_string(&summary).map_err(|e| to_py(e.into()))
}

/// Runs a verification suite; returns the report JSON.
#[pyfunction]
#[pyo3(signature = (suite="exact", replicas=200, seed=1, trials=10_000))]
fn verify(py: Python<'_>, suite: &str, replicas: usize, seed: u64, trials: usize) -> PyResult<String> {
    let suite = Suite::parse(suite).map_err(to_py)?;
    let opts = VerifyOptions { suite, replicas, seed, trials, config: None };
    let report = py.detach(|| experiment::cmd_verify(&opts)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| to_py(e.into()))
}

/// Chi-square divergence between empirical distributions on `D` and `D'`.
#[pyfunction]
fn chi_square_empirical(n: usize, m: usize) -> PyResult<f64> {
    unlearn_core::data_engine::chi_square_empirical(n, m).map_err(to_py)
}

/// Norm of the unlearning bias `∇L_D'(θ) − ∇L_D(θ)` on a synthetic dataset.
#[pyfunction]
#[pyo3(signature = (family_name, n, m, dimension, theta, seed=0, lam=None))]
#[allow(clippy::too_many_arguments)]
fn unlearning_bias(
    family_name: &str,
    n: usize,
    m: usize,
    dimension: usize,
    theta: Vec<f64>,
    seed: u64,
    lam: Option<f64>,
) -> PyResult<Vec<f64>> {
    let fam = family(family_name, lam)?;
    let ds = Dataset::synthetic(&fam, n, dimension, 1.0, seed).map_err(to_py)?;
    let req = UnlearnRequest::first_m(n, m).map_err(to_py)?;
    let spec = model_zoo::certified_constants(fam, dimension, 1.0, None, &vec![0.0; dimension]).map_err(to_py)?;
    unlearn_core::data_engine::unlearning_bias(&ds, &req, &spec, &theta).map_err(to_py)
}

#[pymodule]
fn unlearn_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("UnlearnError", py.get_type::<UnlearnError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("CertificationError", py.get_type::<CertificationError>())?;
    m.add("DivergenceError", py.get_type::<DivergenceError>())?;
    m.add_class::<PyLossSpec>()?;
    m.add_class::<PySensitivityBound>()?;
    m.add_class::<PyCoupledRun>()?;
    m.add_function(wrap_pyfunction!(sigma_psgd_r2d, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_sgd_r2d, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_sgd_d2d, m)?)?;
    m.add_function(wrap_pyfunction!(d2d_training_horizon, m)?)?;
    m.add_function(wrap_pyfunction!(k_for_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_privacy_curve, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(run_coupled, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square_empirical, m)?)?;
    m.add_function(wrap_pyfunction!(unlearning_bias, m)?)?;
    Ok(())
}

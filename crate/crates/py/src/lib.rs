//! Python bindings: meshes, spline spaces, the TD estimators, the pendulum and
//! the experiment runner. Vectors cross the boundary as plain lists.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use splinedp::config::Backend;
use splinedp::harness::{self, run_experiment_i, run_experiment_ii};
use splinedp::pendulum::Integrator;
use splinedp::{
    Config, EstimatorState, Error, ExperimentConfig, Hyperparams, LearningSetup, PendulumParams, PendulumState,
    ReducedEstimator, SplineView, TdRule, ValueLearner, Variant,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NumericalFailure(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Triangulation", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTriangulation {
    inner: Arc<splinedp::Triangulation>,
}

#[pymethods]
impl PyTriangulation {
    #[new]
    fn new(vertices: Vec<Vec<f64>>, simplices: Vec<Vec<usize>>) -> PyResult<Self> {
        let inner = splinedp::Triangulation::new(vertices, simplices).map_err(py_err)?;
        Ok(PyTriangulation { inner: Arc::new(inner) })
    }

    /// Type-I grid over the given breakpoints.
    #[staticmethod]
    fn grid(theta_breaks: Vec<f64>, thetadot_breaks: Vec<f64>) -> PyResult<Self> {
        let inner = splinedp::Triangulation::grid(&theta_breaks, &thetadot_breaks).map_err(py_err)?;
        Ok(PyTriangulation { inner: Arc::new(inner) })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn vertices(&self) -> Vec<Vec<f64>> {
        self.inner.vertices().to_vec()
    }

    #[getter]
    fn simplices(&self) -> Vec<Vec<usize>> {
        self.inner.simplices().iter().map(|s| s.vertex_ids().to_vec()).collect()
    }

    /// `(simplex index, barycentric coordinates)` of the simplex holding `x`.
    fn locate(&self, x: Vec<f64>) -> PyResult<(usize, Vec<f64>)> {
        let loc = self.inner.locate(&x).map_err(py_err)?;
        Ok((loc.simplex, loc.barycentric))
    }
}

/// A spline space S_d^r on a triangulation, with its continuity constraints.
#[pyclass(name = "SplineSpace", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySplineSpace {
    setup: LearningSetup,
}

#[pymethods]
impl PySplineSpace {
    #[new]
    fn new(triangulation: &PyTriangulation, degree: usize, continuity: usize) -> PyResult<Self> {
        let space = splinedp::SplineSpace::new(triangulation.inner.clone(), degree, continuity).map_err(py_err)?;
        let setup = LearningSetup::new(Arc::new(space)).map_err(py_err)?;
        Ok(PySplineSpace { setup })
    }

    /// Space described by a TOML configuration string (defaults apply).
    #[staticmethod]
    #[pyo3(signature = (config_toml = ""))]
    fn from_config(config_toml: &str) -> PyResult<Self> {
        let cfg = Config::from_toml(config_toml).map_err(py_err)?;
        Ok(PySplineSpace { setup: cfg.build_space().map_err(py_err)? })
    }

    #[getter]
    fn degree(&self) -> usize {
        self.setup.space.degree()
    }

    #[getter]
    fn dhat(&self) -> usize {
        self.setup.space.dhat()
    }

    #[getter]
    fn ahat(&self) -> usize {
        self.setup.space.ahat()
    }

    #[getter]
    fn rank_h(&self) -> usize {
        self.setup.projector.rank_h
    }

    #[getter]
    fn free_parameters(&self) -> usize {
        self.setup.projector.free_parameters()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.setup.fingerprint.clone()
    }

    fn triangulation(&self) -> PyTriangulation {
        PyTriangulation { inner: self.setup.space.triangulation_arc().clone() }
    }

    /// Dense basis row of length `ahat` at `x`.
    fn basis_row(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let row = self.setup.space.basis_row(&x).map_err(py_err)?;
        Ok(row.to_dense(self.setup.space.ahat()).iter().copied().collect())
    }

    fn smoothness_matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.setup.smoothness.h)
    }

    fn projector(&self) -> Vec<Vec<f64>> {
        rows(&self.setup.projector.z)
    }

    /// Projects arbitrary coefficients onto the continuous subspace.
    fn project(&self, c: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(&c)?;
        Ok((&self.setup.projector.z * nalgebra::DVector::from_vec(c)).iter().copied().collect())
    }

    fn evaluate(&self, c: Vec<f64>, x: Vec<f64>) -> PyResult<f64> {
        self.check_len(&c)?;
        SplineView::new(&self.setup.space, &c).evaluate(&x).map_err(py_err)
    }

    fn gradient(&self, c: Vec<f64>, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_len(&c)?;
        SplineView::new(&self.setup.space, &c).gradient(&x).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        splinedp::cli::space_report(&self.setup)
    }
}

impl PySplineSpace {
    fn check_len(&self, c: &[f64]) -> PyResult<()> {
        if c.len() != self.setup.space.ahat() {
            return Err(PyValueError::new_err(format!(
                "expected {} coefficients, got {}",
                self.setup.space.ahat(),
                c.len()
            )));
        }
        Ok(())
    }
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn parse_rule(rule: &str) -> PyResult<TdRule> {
    match rule {
        "rlstd" => Ok(TdRule::Rlstd),
        "rlstd_forget" | "rlstd-forget" => Ok(TdRule::RlstdForget),
        other => Err(PyValueError::new_err(format!("unknown rule {other:?}"))),
    }
}

/// RLSTD learner over a spline space; `dense=True` keeps the full covariance.
#[pyclass(name = "Estimator")]
struct PyEstimator {
    space: PySplineSpace,
    learner: Box<dyn ValueLearner + Sync>,
}

#[pymethods]
impl PyEstimator {
    #[new]
    #[pyo3(signature = (space, gamma = 0.98, beta1 = 10.0, beta2 = 0.0, dense = false))]
    fn new(space: &PySplineSpace, gamma: f64, beta1: f64, beta2: f64, dense: bool) -> PyResult<Self> {
        let hyper = Hyperparams { gamma, beta1, beta2 };
        let proj = &space.setup.projector;
        let learner: Box<dyn ValueLearner + Sync> = if dense {
            Box::new(EstimatorState::init(proj.clone(), hyper).map_err(py_err)?)
        } else {
            Box::new(ReducedEstimator::init(proj, hyper).map_err(py_err)?)
        };
        Ok(PyEstimator { space: space.clone(), learner })
    }

    /// One TD update from the transition `x -> x_next` with reward `r`.
    #[pyo3(signature = (x, x_next, reward, rule = "rlstd"))]
    fn update(&mut self, x: Vec<f64>, x_next: Vec<f64>, reward: f64, rule: &str) -> PyResult<()> {
        let rule = parse_rule(rule)?;
        let sp = &self.space.setup.space;
        let (a, b) = (sp.basis_row(&x).map_err(py_err)?, sp.basis_row(&x_next).map_err(py_err)?);
        self.learner.td_update(rule, &a, &b, reward).map_err(py_err)
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.learner.coefficients().iter().copied().collect()
    }

    #[getter]
    fn step_count(&self) -> u64 {
        self.learner.step_count()
    }

    fn covariance(&self) -> Vec<Vec<f64>> {
        rows(&self.learner.covariance())
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        SplineView::new(&self.space.setup.space, self.learner.coefficients().as_slice()).evaluate(&x).map_err(py_err)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        SplineView::new(&self.space.setup.space, self.learner.coefficients().as_slice()).gradient(&x).map_err(py_err)
    }

    /// Largest absolute continuity residual `max |H c|`.
    fn continuity_residual(&self) -> f64 {
        (&self.space.setup.smoothness.h * self.learner.coefficients()).amax()
    }

    fn save_checkpoint(&self, path: &str) -> PyResult<()> {
        self.learner.checkpoint(&self.space.setup.fingerprint).save(path).map_err(py_err)
    }
}

/// One integration step of the pendulum; returns `(theta, thetadot, clamped)`.
#[pyfunction]
#[pyo3(signature = (theta, thetadot, u, w = 0.0, m = 1.0, sigma_w = 0.0, semi_implicit = false))]
fn pendulum_step(
    theta: f64,
    thetadot: f64,
    u: f64,
    w: f64,
    m: f64,
    sigma_w: f64,
    semi_implicit: bool,
) -> PyResult<(f64, f64, bool)> {
    let integrator = if semi_implicit { Integrator::SemiImplicitEuler } else { Integrator::ExplicitEuler };
    let p = PendulumParams { m, sigma_w, integrator, ..Default::default() };
    p.validate().map_err(py_err)?;
    let r = PendulumState::new(theta, thetadot).step(u, w, &p);
    Ok((r.state.theta, r.state.thetadot, r.clamped))
}

/// Longest upright stretch (|theta| < pi/4) in seconds.
#[pyfunction]
#[pyo3(signature = (thetas, dt = 0.02))]
fn compute_t_up(thetas: Vec<f64>, dt: f64) -> f64 {
    harness::compute_t_up(&thetas, dt)
}

/// Runs experiment "I" or "II" for one variant and returns the summary and
/// per-trial records as dictionaries.
#[pyfunction]
#[pyo3(signature = (experiment, variant = "rlstd", config_toml = "", seed = None, dense = false))]
fn run_experiment<'py>(
    py: Python<'py>,
    experiment: &str,
    variant: &str,
    config_toml: &str,
    seed: Option<u64>,
    dense: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = Config::from_toml(config_toml).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.experiment.master_seed = s;
    }
    if dense {
        cfg.learning.backend = Backend::Dense;
    }
    let variant = Variant::parse(variant).map_err(py_err)?;
    let exp = ExperimentConfig::from_config(&cfg, cfg.build_space().map_err(py_err)?, variant).map_err(py_err)?;
    let result = match experiment {
        "I" | "i" | "1" => run_experiment_i(&exp),
        "II" | "ii" | "2" => run_experiment_ii(&exp, None),
        other => return Err(PyValueError::new_err(format!("unknown experiment {other:?}"))),
    }
    .map_err(py_err)?;

    let s = &result.summary;
    let summary = PyDict::new(py);
    summary.set_item("trials", s.trials)?;
    summary.set_item("mean_t_up", s.mean_t_up)?;
    summary.set_item("std_t_up", s.std_t_up)?;
    summary.set_item("min_t_up", s.min_t_up)?;
    summary.set_item("max_t_up", s.max_t_up)?;
    summary.set_item("diverged", s.diverged)?;
    summary.set_item("clamp_events", s.clamp_events)?;

    let records = result
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("trial", r.trial)?;
            d.set_item("theta0", r.theta0)?;
            d.set_item("t_up", r.t_up)?;
            d.set_item("total_reward", r.total_reward)?;
            d.set_item("clamp_count", r.clamp_count)?;
            d.set_item("diverged", r.diverged)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;

    let out = PyDict::new(py);
    out.set_item("variant", variant.name())?;
    out.set_item("summary", summary)?;
    out.set_item("records", records)?;
    out.set_item("runtime_s", result.runtime_s)?;
    Ok(out)
}

#[pymodule]
fn splinedp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTriangulation>()?;
    m.add_class::<PySplineSpace>()?;
    m.add_class::<PyEstimator>()?;
    m.add_function(wrap_pyfunction!(pendulum_step, m)?)?;
    m.add_function(wrap_pyfunction!(compute_t_up, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

//! Python bindings for `sgdchain`.
//!
//! Vectors cross the boundary as lists of floats and matrices as lists of
//! rows. Errors surface as `ValueError` with the library's message.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use sgdchain::cli::{problem_from_toml, problem_to_toml, run_experiment, write_artifacts, ExperimentConfig};
use sgdchain::diagnostics::{self, ConcentrationEstimate, CLAIMS};
use sgdchain::engine::{self, ChainVariant, InitSampler, RunOptions};
use sgdchain::model::{self, NoiseModel};
use sgdchain::{oracle, RngStream};

fn err(e: sgdchain::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn variant_of(name: &str, batch: Option<usize>) -> PyResult<ChainVariant> {
    let need = || batch.ok_or_else(|| PyValueError::new_err("minibatch variants need `batch`"));
    Ok(match name {
        "plain" => ChainVariant::Plain,
        "projected" => ChainVariant::Projected,
        "minibatch" => ChainVariant::Minibatch { batch: need()? },
        "minibatch_aggregated" => ChainVariant::MinibatchAggregated { batch: need()? },
        other => return Err(PyValueError::new_err(format!("unknown variant `{other}`"))),
    })
}

fn options(force: bool) -> RunOptions {
    RunOptions { force_step_size: force, record_draws: false }
}

/// A problem instance: objective, optimum and regularity constants.
#[pyclass(name = "ProblemSpec", module = "sgdchain", from_py_object)]
#[derive(Clone)]
pub struct PyProblemSpec {
    inner: model::ProblemSpec,
}

#[pymethods]
impl PyProblemSpec {
    #[staticmethod]
    fn scalar_quadratic(theta_star: f64, mu: f64) -> PyResult<Self> {
        Ok(PyProblemSpec { inner: model::ProblemSpec::scalar_quadratic(theta_star, mu).map_err(err)? })
    }

    #[staticmethod]
    fn quadratic(theta_star: Vec<f64>, sigma: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyProblemSpec { inner: model::ProblemSpec::quadratic(vector(&theta_star), matrix(&sigma)?).map_err(err)? })
    }

    #[staticmethod]
    fn least_squares(theta_star: Vec<f64>, design_cov: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = model::ProblemSpec::least_squares(vector(&theta_star), matrix(&design_cov)?).map_err(err)?;
        Ok(PyProblemSpec { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (theta_star, design_cov, radius, curvature=None))]
    fn logistic_ball(
        theta_star: Vec<f64>,
        design_cov: Vec<Vec<f64>>,
        radius: f64,
        curvature: Option<(f64, f64)>,
    ) -> PyResult<Self> {
        let inner = model::ProblemSpec::logistic_ball(vector(&theta_star), matrix(&design_cov)?, radius, curvature)
            .map_err(err)?;
        Ok(PyProblemSpec { inner })
    }

    /// Parses a `[spec]` + `[noise]` document; returns (spec, noise).
    #[staticmethod]
    #[pyo3(signature = (text, seed=0))]
    fn from_toml(text: &str, seed: u64) -> PyResult<(Self, PyNoiseModel)> {
        let (spec, noise) = problem_from_toml(text, RngStream::new(seed)).map_err(err)?;
        Ok((PyProblemSpec { inner: spec }, PyNoiseModel { inner: noise }))
    }

    fn to_toml(&self, noise: &PyNoiseModel) -> PyResult<String> {
        problem_to_toml(&self.inner, &noise.inner).map_err(err)
    }

    fn gradient(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(model::gradient(&self.inner, &vector(&theta)).map_err(err)?.iter().copied().collect())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn theta_star(&self) -> Vec<f64> {
        self.inner.theta_star.iter().copied().collect()
    }

    #[getter]
    fn sigma_matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.sigma_matrix)
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    #[getter]
    fn big_l(&self) -> f64 {
        self.inner.big_l
    }

    #[getter]
    fn l_sigma(&self) -> f64 {
        self.inner.l_sigma
    }

    #[setter]
    fn set_l_sigma(&mut self, v: f64) {
        self.inner.l_sigma = v;
    }

    #[getter]
    fn sigma_sq(&self) -> f64 {
        self.inner.sigma_sq
    }

    #[setter]
    fn set_sigma_sq(&mut self, v: f64) {
        self.inner.sigma_sq = v;
    }

    #[getter]
    fn l_w(&self) -> f64 {
        self.inner.l_w
    }

    #[setter]
    fn set_l_w(&mut self, v: f64) {
        self.inner.l_w = v;
    }

    #[getter]
    fn k_bar(&self) -> Option<f64> {
        self.inner.k_bar
    }

    #[setter]
    fn set_k_bar(&mut self, v: Option<f64>) {
        self.inner.k_bar = v;
    }

    #[getter]
    fn k_bar_subexp(&self) -> Option<f64> {
        self.inner.k_bar_subexp
    }

    #[setter]
    fn set_k_bar_subexp(&mut self, v: Option<f64>) {
        self.inner.k_bar_subexp = v;
    }

    #[getter]
    fn k_lip(&self) -> Option<f64> {
        self.inner.k_lip
    }

    #[setter]
    fn set_k_lip(&mut self, v: Option<f64>) {
        self.inner.k_lip = v;
    }

    #[getter]
    fn ball_radius(&self) -> Option<f64> {
        self.inner.ball_radius
    }

    fn __repr__(&self) -> String {
        format!(
            "ProblemSpec(objective={:?}, dim={}, mu={}, L={}, l_sigma={}, sigma_sq={}, l_w={})",
            self.inner.objective, self.inner.dim, self.inner.mu, self.inner.big_l, self.inner.l_sigma, self.inner.sigma_sq, self.inner.l_w
        )
    }
}

/// Gradient-noise model.
#[pyclass(name = "NoiseModel", module = "sgdchain", from_py_object)]
#[derive(Clone)]
pub struct PyNoiseModel {
    inner: NoiseModel,
}

#[pymethods]
impl PyNoiseModel {
    #[staticmethod]
    fn additive_gaussian(cov: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyNoiseModel { inner: NoiseModel::AdditiveGaussian { cov: matrix(&cov)? } })
    }

    #[staticmethod]
    fn isotropic_gaussian(dim: usize, variance: f64) -> Self {
        PyNoiseModel { inner: NoiseModel::isotropic_gaussian(dim, variance) }
    }

    #[staticmethod]
    fn student_t(dof: f64, scale: f64) -> Self {
        PyNoiseModel { inner: NoiseModel::AdditiveStudentT { dof, scale } }
    }

    #[staticmethod]
    fn random_design_gaussian(label_std: f64) -> Self {
        PyNoiseModel { inner: NoiseModel::RandomDesignGaussian { label_std } }
    }

    #[staticmethod]
    fn random_design_bounded(bound: f64, label_std: f64) -> Self {
        PyNoiseModel { inner: NoiseModel::RandomDesignBounded { bound, label_std } }
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    /// (l_sigma, sigma_sq, l_w) for `spec`.
    #[pyo3(signature = (spec, draws=100_000, seed=0))]
    fn constants(&self, spec: &PyProblemSpec, draws: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
        let c = self.inner.constants(&spec.inner, draws, RngStream::new(seed)).map_err(err)?;
        Ok((c.l_sigma, c.sigma_sq, c.l_w))
    }

    /// Copy of `spec` with the noise constants filled in.
    #[pyo3(signature = (spec, draws=100_000, seed=0))]
    fn apply_constants(&self, spec: &PyProblemSpec, draws: usize, seed: u64) -> PyResult<PyProblemSpec> {
        let inner = self.inner.apply_constants(&spec.inner, draws, RngStream::new(seed)).map_err(err)?;
        Ok(PyProblemSpec { inner })
    }

    fn __repr__(&self) -> String {
        format!("NoiseModel({})", self.inner.kind().name())
    }
}

/// Step-size conditions: {condition_id: (threshold, admissible)}.
#[pyfunction]
fn validate_step_size(spec: &PyProblemSpec, beta: f64) -> BTreeMap<String, (f64, bool)> {
    model::validate_step_size(&spec.inner, beta, None)
        .conditions
        .into_iter()
        .map(|c| (c.condition_id, (c.threshold, c.admissible)))
        .collect()
}

/// Iterates θ_0, …, θ_T of one chain (strided for very long runs).
#[pyfunction]
#[pyo3(signature = (spec, noise, beta, theta0, n_steps, seed, variant="plain", batch=None, force_step_size=false))]
#[allow(clippy::too_many_arguments)]
fn run_chain(
    py: Python<'_>,
    spec: &PyProblemSpec,
    noise: &PyNoiseModel,
    beta: f64,
    theta0: Vec<f64>,
    n_steps: usize,
    seed: u64,
    variant: &str,
    batch: Option<usize>,
    force_step_size: bool,
) -> PyResult<Vec<Vec<f64>>> {
    let variant = variant_of(variant, batch)?;
    let tr = py
        .detach(|| {
            engine::run_variant(
                &spec.inner,
                &noise.inner,
                beta,
                variant,
                &vector(&theta0),
                n_steps,
                RngStream::new(seed),
                &options(force_step_size),
            )
        })
        .map_err(err)?;
    Ok(tr.iterates.column_iter().map(|c| c.iter().copied().collect()).collect())
}

/// Snapshots of `n_replicas` chains: {time: [[coords] per replica]}.
#[pyfunction]
#[pyo3(signature = (spec, noise, beta, theta0, n_steps, snapshot_times, n_replicas, seed, force_step_size=false))]
#[allow(clippy::too_many_arguments)]
fn run_ensemble(
    py: Python<'_>,
    spec: &PyProblemSpec,
    noise: &PyNoiseModel,
    beta: f64,
    theta0: Vec<f64>,
    n_steps: usize,
    snapshot_times: Vec<usize>,
    n_replicas: usize,
    seed: u64,
    force_step_size: bool,
) -> PyResult<BTreeMap<usize, Vec<Vec<f64>>>> {
    let ens = py
        .detach(|| {
            engine::run_ensemble(
                &spec.inner,
                &noise.inner,
                beta,
                ChainVariant::Plain,
                &InitSampler::Point(vector(&theta0)),
                n_steps,
                &snapshot_times,
                n_replicas,
                RngStream::new(seed),
                &options(force_step_size),
            )
        })
        .map_err(err)?;
    Ok(ens.snapshot_times.iter().zip(&ens.snapshots).map(|(&t, m)| (t, rows(m))).collect())
}

/// Mean squared distance between synchronously coupled chains at each step.
#[pyfunction]
#[pyo3(signature = (spec, noise, beta, init1, init2, n_steps, n_pairs, seed))]
#[allow(clippy::too_many_arguments)]
fn run_coupled_pair(
    py: Python<'_>,
    spec: &PyProblemSpec,
    noise: &PyNoiseModel,
    beta: f64,
    init1: Vec<f64>,
    init2: Vec<f64>,
    n_steps: usize,
    n_pairs: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let run = py
        .detach(|| {
            engine::run_coupled_pair(
                &spec.inner,
                &noise.inner,
                beta,
                ChainVariant::Plain,
                &InitSampler::Point(vector(&init1)),
                &InitSampler::Point(vector(&init2)),
                n_steps,
                n_pairs,
                RngStream::new(seed),
                &RunOptions::default(),
            )
        })
        .map_err(err)?;
    Ok((0..=run.n_steps).map(|t| run.mean_sq_dist(t)).collect())
}

/// Closed-form stationary law for linear gradients with additive Gaussian
/// noise: {"mean", "cov", "ar_matrix", "relative_residual"}.
#[pyfunction]
fn stationary_law(spec: &PyProblemSpec, noise: &PyNoiseModel, beta: f64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, f64)> {
    let o = oracle::oracle_for(&spec.inner, &noise.inner, beta).map_err(err)?;
    Ok((o.stat_mean.iter().copied().collect(), rows(&o.stat_cov), rows(&o.ar_matrix), o.relative_residual))
}

/// Solution V of V = AVAᵀ + Q.
#[pyfunction]
fn solve_stationary_cov(a: Vec<Vec<f64>>, q: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&oracle::solve_stationary_cov(&matrix(&a)?, &matrix(&q)?).map_err(err)?))
}

#[pyfunction]
fn gaussian_w2(m1: Vec<f64>, c1: Vec<Vec<f64>>, m2: Vec<f64>, c2: Vec<Vec<f64>>) -> PyResult<f64> {
    oracle::gaussian_w2(&vector(&m1), &matrix(&c1)?, &vector(&m2), &matrix(&c2)?).map_err(err)
}

#[pyfunction]
fn tv_gaussian_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> PyResult<f64> {
    oracle::tv_gaussian_1d(m1, v1, m2, v2).map_err(err)
}

fn estimate_tuple(e: ConcentrationEstimate) -> (f64, f64) {
    (e.constant, e.std_error)
}

/// (constant, std_error) of the Ψ̃₂ constant of the samples.
#[pyfunction]
fn estimate_psi2_tilde(xs: Vec<f64>) -> PyResult<(f64, f64)> {
    diagnostics::estimate_psi2_tilde(&xs).map(estimate_tuple).map_err(err)
}

#[pyfunction]
fn estimate_psi2(xs: Vec<f64>) -> PyResult<(f64, f64)> {
    diagnostics::estimate_psi2(&xs).map(estimate_tuple).map_err(err)
}

#[pyfunction]
fn estimate_psi1(xs: Vec<f64>) -> PyResult<(f64, f64)> {
    diagnostics::estimate_psi1(&xs).map(estimate_tuple).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (xs, p_max=None))]
fn estimate_psi1_tilde(xs: Vec<f64>, p_max: Option<usize>) -> PyResult<(f64, f64)> {
    diagnostics::estimate_psi1_tilde(&xs, p_max).map(estimate_tuple).map_err(err)
}

/// Copy of `spec` with K̄, K̄₁ and K certified by Monte Carlo.
#[pyfunction]
#[pyo3(signature = (spec, noise, draws=100_000, seed=0))]
fn certify_noise_constants(spec: &PyProblemSpec, noise: &PyNoiseModel, draws: usize, seed: u64) -> PyResult<PyProblemSpec> {
    let inner = diagnostics::certify_noise_constants(&spec.inner, &noise.inner, draws, RngStream::new(seed)).map_err(err)?;
    Ok(PyProblemSpec { inner })
}

#[pyfunction]
fn geometric_sum_bound(c: f64, alpha: f64, n: usize) -> PyResult<f64> {
    diagnostics::geometric_sum_bound(c, alpha, n).map_err(err)
}

/// (left, right) sides of the trinomial identity; equal for valid (p, l).
#[pyfunction]
fn trinomial_identity(p: u64, l: u64) -> PyResult<(u128, u128)> {
    diagnostics::trinomial_identity(p, l).map_err(err)
}

/// Runs a TOML experiment config. Writes artifacts when `out` is given.
/// Returns (exit_code, report_json).
#[pyfunction]
#[pyo3(signature = (config_text, out=None, seed=None))]
fn run_experiment_config(py: Python<'_>, config_text: &str, out: Option<String>, seed: Option<u64>) -> PyResult<(i32, String)> {
    let mut cfg = ExperimentConfig::from_toml(config_text).map_err(err)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let output = py.detach(|| run_experiment(&cfg)).map_err(err)?;
    if let Some(dir) = out {
        write_artifacts(std::path::Path::new(&dir), &output).map_err(err)?;
    }
    Ok((output.exit_code(), output.report.to_json().map_err(err)?))
}

/// Validates a TOML experiment config without running it.
#[pyfunction]
fn validate_config(config_text: &str) -> PyResult<()> {
    ExperimentConfig::from_toml(config_text).and_then(|c| c.validate()).map_err(err)
}

#[pyfunction]
fn list_checks() -> Vec<(&'static str, &'static str)> {
    CLAIMS.to_vec()
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblemSpec>()?;
    m.add_class::<PyNoiseModel>()?;
    m.add_function(wrap_pyfunction!(validate_step_size, m)?)?;
    m.add_function(wrap_pyfunction!(run_chain, m)?)?;
    m.add_function(wrap_pyfunction!(run_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(run_coupled_pair, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_law, m)?)?;
    m.add_function(wrap_pyfunction!(solve_stationary_cov, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_w2, m)?)?;
    m.add_function(wrap_pyfunction!(tv_gaussian_1d, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_psi2_tilde, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_psi2, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_psi1, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_psi1_tilde, m)?)?;
    m.add_function(wrap_pyfunction!(certify_noise_constants, m)?)?;
    m.add_function(wrap_pyfunction!(geometric_sum_bound, m)?)?;
    m.add_function(wrap_pyfunction!(trinomial_identity, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_config, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(list_checks, m)?)?;
    Ok(())
}

#[pymodule]
fn sgdchain_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

//! Experiment configuration files.
//!
//! A config is a TOML document. Top-level keys select the experiment and
//! its sizes; `[spec]`, `[noise]` and `[noise.params]` describe the problem;
//! the optional tables `[init]`, `[coupling]`, `[tv]`, `[moments]`,
//! `[minibatch]`, `[matrix]` and `[suite]` tune individual experiments.
//! The full grammar is documented in the repository README.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{certify_noise_constants, MatrixNoiseGenerator, RemainderMode};
use crate::engine::{ChainVariant, InitSampler};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ConstantSource, NoiseModel, ObjectiveKind, ProblemSpec, DESIGN_CONSTANT_DRAWS};
use crate::rng::RngStream;

/// Draws used to certify K̄, K̄₁ and K when they are not supplied.
pub const CERTIFY_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Stationary,
    TvDecay,
    Coupling,
    LastIterate,
    PrAverage,
    MinibatchBoundedness,
    MatrixConcentration,
    FullSuite,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Stationary,
        ExperimentKind::TvDecay,
        ExperimentKind::Coupling,
        ExperimentKind::LastIterate,
        ExperimentKind::PrAverage,
        ExperimentKind::MinibatchBoundedness,
        ExperimentKind::MatrixConcentration,
        ExperimentKind::FullSuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Stationary => "stationary",
            ExperimentKind::TvDecay => "tv_decay",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::LastIterate => "last_iterate",
            ExperimentKind::PrAverage => "pr_average",
            ExperimentKind::MinibatchBoundedness => "minibatch_boundedness",
            ExperimentKind::MatrixConcentration => "matrix_concentration",
            ExperimentKind::FullSuite => "full_suite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Plain,
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub objective: ObjectiveKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<Vec<f64>>,
    /// Σ for linear objectives, the design covariance for logistic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    pub mu: f64,
    #[serde(rename = "L", alias = "big_l")]
    pub big_l: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_bar_subexp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_lip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_radius: Option<f64>,
    /// Certify missing K̄, K̄₁, K by Monte Carlo (additive Gaussian noise only).
    #[serde(default = "yes")]
    pub certify: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKindName {
    AdditiveGaussian,
    AdditiveStudentT,
    RandomDesignGaussian,
    RandomDesignBounded,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// Isotropic variance of additive Gaussian noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    /// Full covariance of additive Gaussian noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKindName,
    #[serde(default)]
    pub params: NoiseParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Point,
    Gaussian,
    /// The closed-form invariant law (linear-Gaussian specs only).
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub kind: InitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
}

impl InitConfig {
    pub fn point(p: Vec<f64>) -> Self {
        InitConfig { kind: InitKind::Point, point: Some(p), mean: None, cov: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init1: Option<InitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init2: Option<InitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pairs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_replicas: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub j: u32,
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_div: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinibatchConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_xi_matrix: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_xi_vector: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregated: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorName {
    Zero,
    GaussianWigner,
    GaussianDesign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub generator: GeneratorName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_std: Option<f64>,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_matrix_delta")]
    pub delta: f64,
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_matrix: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_vector: Option<f64>,
}

fn default_matrix_delta() -> f64 {
    0.05
}

/// Component sizes for `full_suite`; every field has a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance_lags: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_replicas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_replicas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property_instances: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trinomial_p: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemainderName {
    #[default]
    ContractionBound,
    FittedRate,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(alias = "seed")]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_grid: Option<Vec<f64>>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_replicas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_times: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default)]
    pub force_step_size: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<VariantName>,
    #[serde(default)]
    pub remainder: RemainderName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_bins: Option<usize>,
    /// Directions u of the test functionals ⟨u, θ⟩.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SpecConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv: Option<TvConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch: Option<MinibatchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteConfig>,
    /// Source text, for locating validation errors.
    #[serde(skip)]
    pub source: Option<String>,
}

/// 1-based line of byte offset `pos` in `text`.
fn line_of(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line of a dotted key such as `spec.mu` or `beta`, if it appears in the
/// source; for an absent key, the line of its table header.
pub fn locate(text: &str, path: &str) -> Option<usize> {
    let (table, key) = match path.rsplit_once('.') {
        Some((t, k)) => (t, k),
        None => ("", path),
    };
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == table {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current != table {
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            if lhs.trim().trim_matches('"') == key {
                return Some(i + 1);
            }
        }
    }
    header_line
}

fn config_err(text: Option<&str>, path: &str, message: impl Into<String>) -> Error {
    Error::Config { message: format!("`{path}`: {}", message.into()), line: text.and_then(|t| locate(t, path)) }
}

fn matrix_from_rows(rows: &[Vec<f64>], d: usize, text: Option<&str>, path: &str) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(config_err(text, path, format!("expected a {d}x{d} matrix")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn vector_of(values: &[f64], d: usize, text: Option<&str>, path: &str) -> Result<DVector<f64>> {
    if values.len() != d {
        return Err(config_err(text, path, format!("expected {d} entries, got {}", values.len())));
    }
    Ok(DVector::from_column_slice(values))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            message: e.message().to_string(),
            line: e.span().map(|s| line_of(text, s.start)),
        })?;
        cfg.source = Some(text.to_string());
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config { message: e.to_string(), line: None })
    }

    fn text(&self) -> Option<&str> {
        self.source.as_deref()
    }

    pub(crate) fn err(&self, path: &str, message: impl Into<String>) -> Error {
        config_err(self.text(), path, message)
    }

    pub fn require<T: Copy>(&self, value: Option<T>, path: &str) -> Result<T> {
        value.ok_or_else(|| self.err(path, format!("required for kind = \"{}\"", self.kind.name())))
    }

    pub fn beta(&self) -> Result<f64> {
        self.require(self.beta, "beta")
    }

    pub fn steps(&self) -> Result<usize> {
        self.require(self.steps, "T")
    }

    pub fn n_replicas(&self) -> Result<usize> {
        self.require(self.n_replicas, "n_replicas")
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.delta_grid.clone().unwrap_or_else(|| vec![0.02, 0.05, 0.1, 0.25])
    }

    pub fn chain_variant(&self) -> ChainVariant {
        match (self.variant, self.spec.as_ref().map(|s| s.objective)) {
            (Some(VariantName::Projected), _) | (None, Some(ObjectiveKind::LogisticBall)) => ChainVariant::Projected,
            _ => ChainVariant::Plain,
        }
    }

    pub fn remainder_mode(&self, fitted_rho: Option<f64>) -> Result<RemainderMode> {
        Ok(match self.remainder {
            RemainderName::ContractionBound => RemainderMode::ContractionBound,
            RemainderName::Zero => RemainderMode::Zero,
            RemainderName::FittedRate => match fitted_rho {
                Some(rho) => RemainderMode::FittedRate { rho },
                None => return Err(self.err("remainder", "fitted_rate needs a TV decay fit in the same run")),
            },
        })
    }

    /// Schema and cross-field checks that need no simulation.
    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        match (self.beta, &self.beta_grid) {
            (Some(_), Some(_)) => return Err(self.err("beta_grid", "give exactly one of `beta` and `beta_grid`")),
            (None, None) if kind != ExperimentKind::MatrixConcentration => {
                return Err(self.err("beta", "one of `beta` and `beta_grid` is required"))
            }
            (None, Some(grid)) => {
                if kind != ExperimentKind::Stationary {
                    return Err(self.err("beta_grid", "a step-size grid is only supported for kind = \"stationary\""));
                }
                if grid.is_empty() || grid.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
                    return Err(self.err("beta_grid", "must be a nonempty list of positive step sizes"));
                }
            }
            _ => {}
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(self.err("beta", "must be positive and finite"));
            }
        }
        if let Some(deltas) = &self.delta_grid {
            if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
                return Err(self.err("delta_grid", "entries must lie in (0, 1)"));
            }
        }
        if kind != ExperimentKind::MatrixConcentration {
            let spec = self.spec.as_ref().ok_or_else(|| self.err("spec", "missing [spec] table"))?;
            self.noise.as_ref().ok_or_else(|| self.err("noise", "missing [noise] table"))?;
            self.validate_spec(spec)?;
        }
        let positive = |v: Option<usize>, path: &str| -> Result<()> {
            match v {
                Some(0) => Err(self.err(path, "must be positive")),
                _ => Ok(()),
            }
        };
        positive(self.steps, "T")?;
        positive(self.n_replicas, "n_replicas")?;
        positive(self.batch, "N")?;
        match kind {
            ExperimentKind::Stationary | ExperimentKind::LastIterate | ExperimentKind::FullSuite => {
                self.steps()?;
                self.n_replicas()?;
            }
            ExperimentKind::TvDecay => {
                self.steps()?;
                self.n_replicas()?;
                if self.spec.as_ref().map(|s| s.dim) != Some(1) {
                    return Err(self.err("spec.dim", "TV decay is computed in one dimension"));
                }
            }
            ExperimentKind::Coupling => {
                self.steps()?;
                let c = self.coupling.as_ref().ok_or_else(|| self.err("coupling", "missing [coupling] table"))?;
                if c.init1.is_none() {
                    return Err(self.err("coupling.init1", "required"));
                }
                if c.init2.is_none() {
                    return Err(self.err("coupling.init2", "required"));
                }
                if c.n_pairs.is_none() {
                    self.n_replicas()?;
                }
            }
            ExperimentKind::PrAverage => {
                self.require(self.n0, "n0")?;
                self.n_replicas()?;
                let n = self.n.as_ref().ok_or_else(|| self.err("n", "required for kind = \"pr_average\""))?;
                if n.is_empty() || n.contains(&0) {
                    return Err(self.err("n", "must be a nonempty list of positive lengths"));
                }
            }
            ExperimentKind::MinibatchBoundedness => {
                self.steps()?;
                self.n_replicas()?;
                self.require(self.batch, "N")?;
            }
            ExperimentKind::MatrixConcentration => {
                self.matrix.as_ref().ok_or_else(|| self.err("matrix", "missing [matrix] table"))?;
            }
        }
        if let Some(times) = &self.snapshot_times {
            let t = self.steps()?;
            if times.windows(2).any(|w| w[0] >= w[1]) || times.last().is_some_and(|&l| l > t) {
                return Err(self.err("snapshot_times", "must be strictly increasing and at most T"));
            }
        }
        if let Some(m) = &self.matrix {
            self.matrix_generator(m)?;
            if m.n_grid.is_empty() || m.n_grid.contains(&0) {
                return Err(self.err("matrix.n_grid", "must be a nonempty list of positive batch sizes"));
            }
            if !(m.delta > 0.0 && m.delta < 1.0) {
                return Err(self.err("matrix.delta", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    fn validate_spec(&self, s: &SpecConfig) -> Result<()> {
        if s.dim == 0 {
            return Err(self.err("spec.dim", "must be positive"));
        }
        if !(s.mu > 0.0) {
            return Err(self.err("spec.mu", "must be positive"));
        }
        if !(s.big_l >= s.mu) {
            return Err(self.err("spec.L", "must be at least mu"));
        }
        for (name, v) in [("l_sigma", s.l_sigma), ("sigma_sq", s.sigma_sq), ("l_w", s.l_w)] {
            if v.is_some_and(|x| !(x >= 0.0)) {
                return Err(self.err(&format!("spec.{name}"), "must be nonnegative"));
            }
        }
        if s.objective == ObjectiveKind::LogisticBall && s.ball_radius.is_none() {
            return Err(self.err("spec.ball_radius", "required for the logistic objective"));
        }
        Ok(())
    }

    /// Builds the problem spec and noise model, filling in missing noise
    /// constants and, when possible, certified concentration constants.
    pub fn build_problem(&self, master: RngStream) -> Result<(ProblemSpec, NoiseModel)> {
        let s = self.spec.as_ref().ok_or_else(|| self.err("spec", "missing [spec] table"))?;
        let nc = self.noise.as_ref().ok_or_else(|| self.err("noise", "missing [noise] table"))?;
        build_problem_from(s, nc, self.text(), master)
    }

    pub fn init_sampler(&self, init: Option<&InitConfig>, path: &str, spec: &ProblemSpec, noise: &NoiseModel, beta: f64) -> Result<InitSampler> {
        let d = spec.dim;
        let text = self.text();
        let Some(init) = init else {
            return Ok(InitSampler::Point(spec.theta_star.clone()));
        };
        Ok(match init.kind {
            InitKind::Point => {
                let p = init.point.as_ref().ok_or_else(|| self.err(&format!("{path}.point"), "required for a point init"))?;
                InitSampler::Point(vector_of(p, d, text, &format!("{path}.point"))?)
            }
            InitKind::Gaussian => {
                let mean = match &init.mean {
                    Some(m) => vector_of(m, d, text, &format!("{path}.mean"))?,
                    None => spec.theta_star.clone(),
                };
                let rows = init.cov.as_ref().ok_or_else(|| self.err(&format!("{path}.cov"), "required for a gaussian init"))?;
                InitSampler::Gaussian { mean, cov: matrix_from_rows(rows, d, text, &format!("{path}.cov"))? }
            }
            InitKind::Stationary => {
                let o = crate::oracle::oracle_for(spec, noise, beta)
                    .map_err(|e| self.err(&format!("{path}.kind"), format!("stationary init needs the closed-form law: {e}")))?;
                InitSampler::Gaussian { mean: o.stat_mean, cov: o.stat_cov }
            }
        })
    }

    pub fn matrix_generator(&self, m: &MatrixConfig) -> Result<MatrixNoiseGenerator> {
        let text = self.text();
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| self.err(&format!("matrix.{key}"), "required for this generator"));
        let dim = || self.require(m.dim, "matrix.dim");
        Ok(match m.generator {
            GeneratorName::Zero => MatrixNoiseGenerator::Zero { dim: dim()? },
            GeneratorName::GaussianWigner => MatrixNoiseGenerator::GaussianWigner {
                dim: dim()?,
                matrix_scale: need(m.matrix_scale, "matrix_scale")?,
                vector_scale: need(m.vector_scale, "vector_scale")?,
            },
            GeneratorName::GaussianDesign => {
                let rows = m.design_cov.as_ref().ok_or_else(|| self.err("matrix.design_cov", "required for this generator"))?;
                let design_cov = matrix_from_rows(rows, rows.len(), text, "matrix.design_cov")?;
                linalg::psd_eigen(&design_cov).map_err(|e| self.err("matrix.design_cov", e.to_string()))?;
                MatrixNoiseGenerator::GaussianDesign { design_cov, label_std: need(m.label_std, "label_std")? }
            }
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(format!("out/{}", self.kind.name())))
    }
}

fn build_problem_from(s: &SpecConfig, nc: &NoiseConfig, text: Option<&str>, master: RngStream) -> Result<(ProblemSpec, NoiseModel)> {
    let d = s.dim;
    let wrap = |path: &'static str| move |e: Error| config_err(text, path, e.to_string());
    let theta_star = match &s.theta_star {
        Some(v) => vector_of(v, d, text, "spec.theta_star")?,
        None => DVector::zeros(d),
    };
    let sigma = match &s.sigma {
        Some(rows) => Some(matrix_from_rows(rows, d, text, "spec.sigma")?),
        None => None,
    };
    let mut spec = match s.objective {
        ObjectiveKind::Quadratic | ObjectiveKind::LeastSquaresRandomDesign => {
            let sigma = match sigma {
                Some(m) => m,
                None if (s.big_l - s.mu).abs() <= 1e-12 * s.big_l => DMatrix::identity(d, d) * s.mu,
                None => return Err(config_err(text, "spec.sigma", "required when L differs from mu")),
            };
            let spec = if s.objective == ObjectiveKind::Quadratic {
                ProblemSpec::quadratic(theta_star, sigma)
            } else {
                ProblemSpec::least_squares(theta_star, sigma)
            }
            .map_err(wrap("spec.sigma"))?;
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300);
            if !close(spec.mu, s.mu) {
                return Err(config_err(text, "spec.mu", format!("does not match the smallest eigenvalue {} of sigma", spec.mu)));
            }
            if !close(spec.big_l, s.big_l) {
                return Err(config_err(text, "spec.L", format!("does not match the largest eigenvalue {} of sigma", spec.big_l)));
            }
            spec
        }
        ObjectiveKind::LogisticBall => {
            let design = sigma.unwrap_or_else(|| DMatrix::identity(d, d));
            let radius = s.ball_radius.ok_or_else(|| config_err(text, "spec.ball_radius", "required"))?;
            ProblemSpec::logistic_ball(theta_star, design, radius, Some((s.mu, s.big_l))).map_err(wrap("spec"))?
        }
    };
    if s.objective != ObjectiveKind::LogisticBall {
        spec.ball_radius = s.ball_radius;
    }
    let noise = noise_from(nc, d, text)?;
    noise.check_compatible(&spec).map_err(wrap("noise.params"))?;
    if s.l_sigma.is_none() || s.sigma_sq.is_none() || s.l_w.is_none() {
        spec = noise.apply_constants(&spec, DESIGN_CONSTANT_DRAWS, master.split_named("noise_constants"))?;
    }
    for (name, v) in [("l_sigma", s.l_sigma), ("sigma_sq", s.sigma_sq), ("l_w", s.l_w)] {
        if let Some(v) = v {
            match name {
                "l_sigma" => spec.l_sigma = v,
                "sigma_sq" => spec.sigma_sq = v,
                _ => spec.l_w = v,
            }
            spec.set_provenance(name, ConstantSource::Supplied);
        }
    }
    let missing_k = s.k_bar.is_none() || s.k_bar_subexp.is_none() || s.k_lip.is_none();
    if s.certify && missing_k && matches!(noise, NoiseModel::AdditiveGaussian { .. }) {
        spec = certify_noise_constants(&spec, &noise, CERTIFY_DRAWS, master.split_named("certify"))?;
    }
    for (name, v) in [("k_bar", s.k_bar), ("k_bar_subexp", s.k_bar_subexp), ("k_lip", s.k_lip)] {
        if let Some(v) = v {
            match name {
                "k_bar" => spec.k_bar = Some(v),
                "k_bar_subexp" => spec.k_bar_subexp = Some(v),
                _ => spec.k_lip = Some(v),
            }
            spec.set_provenance(name, ConstantSource::Supplied);
        }
    }
    spec.validate().map_err(wrap("spec"))?;
    Ok((spec, noise))
}

fn noise_from(nc: &NoiseConfig, d: usize, text: Option<&str>) -> Result<NoiseModel> {
    let p = &nc.params;
    let need = |v: Option<f64>, key: &str| {
        v.ok_or_else(|| config_err(text, &format!("noise.params.{key}"), "required for this noise kind"))
    };
    Ok(match nc.kind {
        NoiseKindName::AdditiveGaussian => match (&p.cov, p.variance) {
            (Some(_), Some(_)) => return Err(config_err(text, "noise.params.cov", "give either `variance` or `cov`")),
            (Some(rows), None) => NoiseModel::AdditiveGaussian { cov: matrix_from_rows(rows, d, text, "noise.params.cov")? },
            (None, Some(v)) => NoiseModel::isotropic_gaussian(d, v),
            (None, None) => return Err(config_err(text, "noise.params.variance", "required for additive_gaussian")),
        },
        NoiseKindName::AdditiveStudentT => NoiseModel::AdditiveStudentT { dof: need(p.dof, "dof")?, scale: need(p.scale, "scale")? },
        NoiseKindName::RandomDesignGaussian => NoiseModel::RandomDesignGaussian { label_std: need(p.label_std, "label_std")? },
        NoiseKindName::RandomDesignBounded => {
            NoiseModel::RandomDesignBounded { bound: need(p.bound, "bound")?, label_std: need(p.label_std, "label_std")? }
        }
    })
}

/// The `[spec]`/`[noise]` tables describing `spec` and `noise`, with every
/// constant written out.
pub fn problem_to_config(spec: &ProblemSpec, noise: &NoiseModel) -> (SpecConfig, NoiseConfig) {
    let s = SpecConfig {
        objective: spec.objective,
        dim: spec.dim,
        theta_star: Some(spec.theta_star.iter().copied().collect()),
        sigma: Some(rows_of(&spec.sigma_matrix)),
        mu: spec.mu,
        big_l: spec.big_l,
        l_sigma: Some(spec.l_sigma),
        sigma_sq: Some(spec.sigma_sq),
        l_w: Some(spec.l_w),
        k_bar: spec.k_bar,
        k_bar_subexp: spec.k_bar_subexp,
        k_lip: spec.k_lip,
        ball_radius: spec.ball_radius,
        certify: false,
    };
    let mut params = NoiseParams::default();
    let kind = match noise {
        NoiseModel::AdditiveGaussian { cov } => {
            params.cov = Some(rows_of(cov));
            NoiseKindName::AdditiveGaussian
        }
        NoiseModel::AdditiveStudentT { dof, scale } => {
            params.dof = Some(*dof);
            params.scale = Some(*scale);
            NoiseKindName::AdditiveStudentT
        }
        NoiseModel::RandomDesignGaussian { label_std } => {
            params.label_std = Some(*label_std);
            NoiseKindName::RandomDesignGaussian
        }
        NoiseModel::RandomDesignBounded { bound, label_std } => {
            params.bound = Some(*bound);
            params.label_std = Some(*label_std);
            NoiseKindName::RandomDesignBounded
        }
    };
    (s, NoiseConfig { kind, params })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    spec: SpecConfig,
    noise: NoiseConfig,
}

/// Serializes a problem to a standalone config document.
pub fn problem_to_toml(spec: &ProblemSpec, noise: &NoiseModel) -> Result<String> {
    let (spec, noise) = problem_to_config(spec, noise);
    toml::to_string(&ProblemFile { spec, noise }).map_err(|e| Error::Config { message: e.to_string(), line: None })
}

/// Parses a document written by [`problem_to_toml`]. Constants written out
/// explicitly are used as given.
pub fn problem_from_toml(text: &str, master: RngStream) -> Result<(ProblemSpec, NoiseModel)> {
    let file: ProblemFile = toml::from_str(text).map_err(|e| Error::Config {
        message: e.message().to_string(),
        line: e.span().map(|s| line_of(text, s.start)),
    })?;
    let (mut spec, noise) = build_problem_from(&file.spec, &file.noise, Some(text), master)?;
    // Objective-derived curvature is recomputed; keep the written values.
    spec.mu = file.spec.mu;
    spec.big_l = file.spec.big_l;
    Ok((spec, noise))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
kind = "stationary"
master_seed = 1
beta = 0.1
T = 100
n_replicas = 10

[spec]
objective = "quadratic"
dim = 1
mu = 1.0
L = 1.0

[noise]
kind = "additive_gaussian"
params = { variance = 1.0 }
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.steps, Some(100));
    }

    #[test]
    fn missing_mu_is_named() {
        let text = BASE.replace("mu = 1.0\n", "");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("mu"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn beta_and_grid_conflict() {
        let text = BASE.replace("beta = 0.1", "beta = 0.1\nbeta_grid = [0.1, 0.2]");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        match cfg.validate().unwrap_err() {
            Error::Config { message, line } => {
                assert!(message.contains("beta"));
                assert_eq!(line, Some(5));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn locate_finds_nested_keys() {
        assert_eq!(locate(BASE, "spec.mu"), Some(11));
        assert_eq!(locate(BASE, "spec.sigma"), Some(8));
        assert_eq!(locate(BASE, "T"), Some(5));
    }
}

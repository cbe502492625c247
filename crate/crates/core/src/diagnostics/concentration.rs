//! Empirical sub-Gaussian and sub-exponential constants.
//!
//! Four families, all positively homogeneous in the sample:
//!
//! * `SubGaussianTilde`: E exp(λ²X²) ≤ exp(λ²K²) for 0 ≤ λ ≤ 1/K;
//! * `SubGaussian`: E exp(λX) ≤ exp(λ²K²) for all λ (X centered);
//! * `SubExpTilde`: ‖X‖_{L_p} ≤ Kp for all p ≥ 1;
//! * `SubExp`: E exp(λX) ≤ exp(λ²K²) for |λ| ≤ 1/K (X centered).
//!
//! MGF families are estimated by bisection on K with λ restricted to a grid
//! of multiples of 1/K, so that feasibility is monotone in K.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::stats;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ConstantSource, GradientSampler, NoiseModel, ProblemSpec};
use crate::rng::RngStream;

/// Minimum sample size for any concentration estimate.
pub const MIN_CONCENTRATION_SAMPLES: usize = 10_000;
/// Minimum sample size for moment estimates.
pub const MIN_MOMENT_SAMPLES: usize = 100;
/// Constant reported for a sample that is identically zero.
pub const CONSTANT_FLOOR: f64 = 1e-12;
/// Bisection stops at this relative width.
pub const GRID_RESOLUTION: f64 = 1e-6;
const HEAVY_TAIL_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SubGaussianTilde,
    SubGaussian,
    SubExpTilde,
    SubExp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MomentRatio,
    MgfGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationEstimate {
    pub family: Family,
    pub constant: f64,
    /// Monte Carlo standard error of `constant`.
    pub std_error: f64,
    pub method: Method,
    pub n_samples: usize,
    pub p_max: Option<usize>,
    /// Multipliers c with λ = c/K at which the MGF condition is imposed.
    pub lambda_grid: Option<Vec<f64>>,
}

impl ConcentrationEstimate {
    /// `constant + z·std_error`.
    pub fn upper(&self, z: f64) -> f64 {
        self.constant + z * self.std_error
    }
}

/// Empirical L_p norms M_p = (E‖θ − θ*‖ᵖ)^{1/p}, p = 1..p_max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub values: Vec<f64>,
    /// Jackknife standard errors.
    pub std_errors: Vec<f64>,
    pub n_samples: usize,
}

impl Moments {
    /// M_p for p ≥ 1.
    pub fn get(&self, p: usize) -> f64 {
        self.values[p - 1]
    }

    pub fn p_max(&self) -> usize {
        self.values.len()
    }
}

/// Largest admissible moment order for n samples: ⌊log₂ n⌋.
pub fn max_moment_order(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        (usize::BITS - 1 - n.leading_zeros()) as usize
    }
}

/// Moments of ‖row − θ*‖ over the rows of `samples`.
pub fn estimate_moments(samples: &DMatrix<f64>, theta_star: &DVector<f64>, p_max: usize) -> Result<Moments> {
    if samples.ncols() != theta_star.len() {
        return Err(Error::DimensionMismatch { expected: theta_star.len(), got: samples.ncols() });
    }
    let norms: Vec<f64> = samples
        .row_iter()
        .map(|r| (r.transpose() - theta_star).norm())
        .collect();
    estimate_scalar_moments(&norms, p_max)
}

/// Moments (E|x|ᵖ)^{1/p} of a scalar sample.
pub fn estimate_scalar_moments(xs: &[f64], p_max: usize) -> Result<Moments> {
    let n = xs.len();
    if n < MIN_MOMENT_SAMPLES {
        return Err(Error::TooFewSamples { needed: MIN_MOMENT_SAMPLES, got: n });
    }
    let limit = max_moment_order(n);
    if p_max == 0 || p_max > limit {
        return Err(Error::MomentOrderTooLarge { p_max, n, limit });
    }
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Ok(Moments { values: vec![0.0; p_max], std_errors: vec![0.0; p_max], n_samples: n });
    }
    let ys: Vec<f64> = xs.iter().map(|x| x.abs() / scale).collect();
    let nf = n as f64;
    let mut values = Vec::with_capacity(p_max);
    let mut std_errors = Vec::with_capacity(p_max);
    for p in 1..=p_max {
        let pf = p as f64;
        let pows: Vec<f64> = ys.iter().map(|y| y.powi(p as i32)).collect();
        let total: f64 = pows.iter().sum();
        values.push(scale * (total / nf).powf(1.0 / pf));
        let loo: Vec<f64> = pows
            .iter()
            .map(|yp| scale * ((total - yp).max(0.0) / (nf - 1.0)).powf(1.0 / pf))
            .collect();
        let m = stats::mean(&loo);
        let ss: f64 = loo.iter().map(|v| (v - m) * (v - m)).sum();
        std_errors.push((ss * (nf - 1.0) / nf).sqrt());
    }
    Ok(Moments { values, std_errors, n_samples: n })
}

fn check_len(xs: &[f64]) -> Result<()> {
    if xs.len() < MIN_CONCENTRATION_SAMPLES {
        return Err(Error::TooFewSamples { needed: MIN_CONCENTRATION_SAMPLES, got: xs.len() });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::arg("samples", "contain non-finite values"));
    }
    Ok(())
}

/// Smallest K in [lo, hi] with `feasible(K)`, to relative width
/// [`GRID_RESOLUTION`]; `feasible` must be monotone and hold at `hi`.
fn bisect(lo: f64, hi: f64, feasible: impl Fn(f64) -> bool) -> f64 {
    if feasible(lo) {
        return lo;
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    while b - a > GRID_RESOLUTION {
        let m = 0.5 * (a + b);
        if feasible(m.exp()) {
            b = m;
        } else {
            a = m;
        }
    }
    b.exp()
}

/// Value, log-MGF and its K-derivative for one grid constraint
/// log E exp(h(X, K)) − c² at K.
struct Constraint {
    slack: f64,
    log_mgf_se: f64,
    d_dk: f64,
}

/// Delta-method standard error of the bisection root from its binding
/// constraint.
fn root_std_error(binding: Option<Constraint>) -> f64 {
    match binding {
        Some(c) if c.d_dk.abs() > 0.0 => (c.log_mgf_se / c.d_dk.abs()).min(f64::MAX),
        _ => 0.0,
    }
}

/// Evaluates log mean exp(c·g(x)/Kᵉ) − c² and its derivative in K, where
/// `e` is 2 for the squared family and 1 otherwise.
fn constraint(gs: &[f64], c: f64, k: f64, squared: bool) -> Constraint {
    let (coef, e) = if squared { (c * c / (k * k), 2.0) } else { (c / k, 1.0) };
    let (gmin, gmax) = gs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &g| (a.min(g), b.max(g)));
    let shift = (coef * gmin).max(coef * gmax);
    let n = gs.len() as f64;
    let (mut s, mut s2, mut sy) = (0.0, 0.0, 0.0);
    for g in gs {
        let y = coef * g;
        let w = (y - shift).exp();
        s += w;
        s2 += w * w;
        sy += y * w;
    }
    let mean_w = s / n;
    let var_w = (s2 / n - mean_w * mean_w).max(0.0);
    Constraint {
        slack: shift + mean_w.ln() - c * c,
        log_mgf_se: (var_w / n).sqrt() / mean_w,
        // d/dK of log E exp(y) with y ∝ K^{−e}: −(e/K)·E[y e^y]/E[e^y].
        d_dk: -(e / k) * (sy / s),
    }
}

fn mgf_estimate(gs: &[f64], grid: &[f64], squared: bool, lo: f64, hi: f64, family: Family) -> Result<ConcentrationEstimate> {
    let feasible = |k: f64| grid.iter().all(|&c| constraint(gs, c, k, squared).slack <= 0.0);
    if !feasible(hi) {
        return Err(Error::HeavyTails { limit: hi });
    }
    let k = bisect(lo, hi, feasible);
    let binding = grid
        .iter()
        .map(|&c| constraint(gs, c, k, squared))
        .max_by(|a, b| a.slack.total_cmp(&b.slack));
    Ok(ConcentrationEstimate {
        family,
        constant: k,
        std_error: root_std_error(binding),
        method: Method::MgfGrid,
        n_samples: gs.len(),
        p_max: None,
        lambda_grid: Some(grid.to_vec()),
    })
}

fn floor_estimate(family: Family, method: Method, n: usize, grid: Option<Vec<f64>>) -> ConcentrationEstimate {
    ConcentrationEstimate {
        family,
        constant: CONSTANT_FLOOR,
        std_error: 0.0,
        method,
        n_samples: n,
        p_max: None,
        lambda_grid: grid,
    }
}

fn tilde_grid() -> Vec<f64> {
    (1..=9).map(|j| f64::from(j) / 9.0).collect()
}

fn symmetric_grid(step: f64, count: i32) -> Vec<f64> {
    let pos: Vec<f64> = (1..=count).map(|j| step * f64::from(j)).collect();
    pos.iter().map(|c| -c).rev().chain(pos.iter().copied()).collect()
}

/// Ψ̃₂ constant of X: E exp(λ²X²) ≤ exp(λ²K²) at λ = c/K, c ∈ {1/9, …, 1}.
pub fn estimate_psi2_tilde(xs: &[f64]) -> Result<ConcentrationEstimate> {
    check_len(xs)?;
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let rms = stats::mean(&sq).sqrt();
    if rms == 0.0 {
        return Ok(floor_estimate(Family::SubGaussianTilde, Method::MgfGrid, xs.len(), Some(tilde_grid())));
    }
    // Jensen at c = 1 gives K ≥ RMS.
    mgf_estimate(&sq, &tilde_grid(), true, rms, HEAVY_TAIL_FACTOR * rms, Family::SubGaussianTilde)
}

fn centered(xs: &[f64]) -> (Vec<f64>, f64) {
    let m = stats::mean(xs);
    let c: Vec<f64> = xs.iter().map(|x| x - m).collect();
    let sd = stats::variance(&c).sqrt();
    (c, sd)
}

/// Ψ₂ constant of X − EX: log E exp(λX) ≤ λ²K² at λ = c/K,
/// c ∈ ±{0.25, 0.5, …, 4}.
pub fn estimate_psi2(xs: &[f64]) -> Result<ConcentrationEstimate> {
    check_len(xs)?;
    let (c, sd) = centered(xs);
    let grid = symmetric_grid(0.25, 16);
    if sd == 0.0 {
        return Ok(floor_estimate(Family::SubGaussian, Method::MgfGrid, xs.len(), Some(grid)));
    }
    mgf_estimate(&c, &grid, false, 1e-3 * sd, HEAVY_TAIL_FACTOR * sd, Family::SubGaussian)
}

/// Ψ₁ constant of X − EX: log E exp(λX) ≤ λ²K² at λ = c/K,
/// c ∈ ±{1/8, …, 1}.
pub fn estimate_psi1(xs: &[f64]) -> Result<ConcentrationEstimate> {
    check_len(xs)?;
    let (c, sd) = centered(xs);
    let grid = symmetric_grid(0.125, 8);
    if sd == 0.0 {
        return Ok(floor_estimate(Family::SubExp, Method::MgfGrid, xs.len(), Some(grid)));
    }
    mgf_estimate(&c, &grid, false, 1e-3 * sd, HEAVY_TAIL_FACTOR * sd, Family::SubExp)
}

/// Ψ̃₁ constant of X: max over p ≤ p_max of ‖X‖_{L_p}/p, with p_max
/// defaulting to ⌊log₂ n⌋.
pub fn estimate_psi1_tilde(xs: &[f64], p_max: Option<usize>) -> Result<ConcentrationEstimate> {
    check_len(xs)?;
    let p_max = p_max.unwrap_or_else(|| max_moment_order(xs.len()));
    let m = estimate_scalar_moments(xs, p_max)?;
    let (p, ratio) = m
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (i + 1, v / (i + 1) as f64))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("p_max ≥ 1");
    if ratio == 0.0 {
        let mut e = floor_estimate(Family::SubExpTilde, Method::MomentRatio, xs.len(), None);
        e.p_max = Some(p_max);
        return Ok(e);
    }
    Ok(ConcentrationEstimate {
        family: Family::SubExpTilde,
        constant: ratio,
        std_error: m.std_errors[p - 1] / p as f64,
        method: Method::MomentRatio,
        n_samples: xs.len(),
        p_max: Some(p_max),
        lambda_grid: None,
    })
}

pub fn estimate(family: Family, xs: &[f64]) -> Result<ConcentrationEstimate> {
    match family {
        Family::SubGaussianTilde => estimate_psi2_tilde(xs),
        Family::SubGaussian => estimate_psi2(xs),
        Family::SubExpTilde => estimate_psi1_tilde(xs, None),
        Family::SubExp => estimate_psi1(xs),
    }
}

/// Fills K̄, K̄₁ and K for additive Gaussian noise: K̄ and K̄₁ are the
/// Ψ̃₂ and Ψ̃₁ estimates of ‖ε‖ plus three standard errors, and
/// K = √(λ_max(C)/2) exactly.
pub fn certify_noise_constants(
    spec: &ProblemSpec,
    noise: &NoiseModel,
    draws: usize,
    stream: RngStream,
) -> Result<ProblemSpec> {
    let NoiseModel::AdditiveGaussian { cov } = noise else {
        return Err(Error::Unsupported(format!(
            "noise constants can only be certified for additive Gaussian noise, not {}",
            noise.kind().name()
        )));
    };
    let sampler = GradientSampler::new(spec, noise)?;
    let mut rng = stream.rng();
    let norms: Vec<f64> = (0..draws)
        .map(|_| sampler.sample_noise(&spec.theta_star, &mut rng).norm())
        .collect();
    let psi2 = estimate_psi2_tilde(&norms)?;
    let psi1 = estimate_psi1_tilde(&norms, None)?;
    let mut out = spec.clone();
    let mc = |e: &ConcentrationEstimate| ConstantSource::MonteCarlo { draws, stderr: e.std_error };
    out.k_bar = Some(psi2.upper(3.0));
    out.set_provenance("k_bar", mc(&psi2));
    out.k_bar_subexp = Some(psi1.upper(3.0));
    out.set_provenance("k_bar_subexp", mc(&psi1));
    out.k_lip = Some((linalg::min_max_eigenvalues(cov).1.max(0.0) / 2.0).sqrt());
    out.set_provenance("k_lip", ConstantSource::Exact);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_order_limit() {
        assert_eq!(max_moment_order(100), 6);
        assert_eq!(max_moment_order(1024), 10);
        let xs = vec![1.0; 100];
        assert!(matches!(estimate_scalar_moments(&xs, 7), Err(Error::MomentOrderTooLarge { .. })));
    }

    #[test]
    fn zero_samples_at_floor() {
        let xs = vec![0.0; MIN_CONCENTRATION_SAMPLES];
        for f in [Family::SubGaussianTilde, Family::SubGaussian, Family::SubExpTilde, Family::SubExp] {
            assert_eq!(estimate(f, &xs).unwrap().constant, CONSTANT_FLOOR);
        }
    }

    #[test]
    fn constant_sample_psi1_tilde() {
        let xs = vec![2.5; MIN_CONCENTRATION_SAMPLES];
        let e = estimate_psi1_tilde(&xs, None).unwrap();
        assert!((e.constant - 2.5).abs() < 1e-12);
    }

    #[test]
    fn too_few() {
        assert!(matches!(estimate_psi2(&[1.0; 10]), Err(Error::TooFewSamples { .. })));
    }
}

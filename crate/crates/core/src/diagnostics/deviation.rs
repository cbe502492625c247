//! High-probability deviation checks: last iterate, tail average,
//! minibatch boundedness and averaged noise matrices.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::bounds::{self, MinibatchConditions};
use super::report::{BoundCheck, CheckPoint};
use super::stationary::{check_samples, distances, require_light_tailed};
use super::stats;
use crate::engine::map_replicas;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::step_size::{DIMENSION_FREE_DEVIATION, TAIL_AVERAGE};
use crate::model::{validate_step_size, NoiseModel, ProblemSpec};
use crate::oracle::{self, OracleSolution};
use crate::rng::RngStream;

/// Flag carried by checks whose allowance substitutes M := 1 and the
/// contraction bound for the non-constructive TV constants.
pub const REMAINDER_FLAG: &str = "remainder_m1_rho_contraction_bound";

/// How the TV remainder M·ρᵀ·V(θ₀) of the last-iterate bounds is filled in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RemainderMode {
    /// ρ = √((1 − βμ)² + β²L_W), M = 1.
    ContractionBound,
    /// ρ from a fitted TV decay rate, M = 1.
    FittedRate { rho: f64 },
    /// No allowance.
    Zero,
}

fn allowed_frequency(p: f64, n: usize) -> (f64, f64) {
    let p = p.min(1.0);
    (p, 3.0 * stats::binomial_sigma(p, n))
}

/// Exceedance frequencies of ‖θ_T − θ*‖ over each last-iterate radius, for
/// every δ, against δ + remainder + 3 binomial σ.
#[allow(clippy::too_many_arguments)]
pub fn check_last_iterate_deviation(
    samples: &DMatrix<f64>,
    spec: &ProblemSpec,
    noise: &NoiseModel,
    beta: f64,
    deltas: &[f64],
    steps: usize,
    start_sq_dist: f64,
    remainder: RemainderMode,
) -> Result<Vec<BoundCheck>> {
    require_light_tailed(noise)?;
    check_samples(samples, spec)?;
    if deltas.is_empty() || deltas.iter().any(|&d| !(1e-3..=0.5).contains(&d)) {
        return Err(Error::arg("delta_grid", "every delta must lie in [1e-3, 0.5]"));
    }
    let min_delta = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let n = samples.nrows();
    let needed = (30.0 / min_delta).ceil() as usize;
    if n < needed {
        return Err(Error::TooFewSamples { needed, got: n });
    }
    if spec.k_bar.is_none() && spec.k_lip.is_none() {
        return Err(Error::MissingConstant("k_bar"));
    }
    let rem = match remainder {
        RemainderMode::ContractionBound => bounds::tv_remainder(bounds::alpha_w(spec, beta), steps, start_sq_dist),
        RemainderMode::FittedRate { rho } => bounds::tv_remainder(rho, steps, start_sq_dist),
        RemainderMode::Zero => 0.0,
    };
    let dists = distances(samples, &spec.theta_star);
    let run = |claim: &str, radius: &dyn Fn(f64) -> f64| {
        let points = deltas
            .iter()
            .map(|&d| {
                let (p, slack) = allowed_frequency(d + rem, n);
                CheckPoint::at_most(format!("delta={d}"), stats::frac_exceeding(&dists, radius(d)), p, slack)
            })
            .collect();
        let c = BoundCheck::aggregate(claim, "exceedance frequency", points)
            .with_note(format!("remainder allowance {rem:.3e}"));
        match remainder {
            RemainderMode::Zero => c.with_flag("remainder_zero"),
            _ => c.with_flag(REMAINDER_FLAG),
        }
    };
    let mut out = Vec::new();
    if let Some(kb) = spec.k_bar {
        out.push(run("deviation.last_iterate_subgaussian", &|d| {
            bounds::last_iterate_subgaussian_radius(kb, spec, beta, d)
        }));
    }
    if let Some(k1) = spec.k_bar_subexp {
        if beta <= 1.0 / (2.0 * spec.mu) {
            out.push(run("deviation.last_iterate_subexp", &|d| bounds::last_iterate_subexp_radius(k1, spec, beta, d)));
        }
    }
    if let Some(k) = spec.k_lip {
        if validate_step_size(spec, beta, None).admits(DIMENSION_FREE_DEVIATION) {
            out.push(run("deviation.dimension_free_subgaussian", &|d| {
                bounds::dimension_free_subgaussian_radius(k, spec, beta, d)
            }));
            out.push(run("deviation.dimension_free_subexp", &|d| {
                bounds::dimension_free_subexp_radius(k, spec, beta, d)
            }));
        }
    }
    Ok(out)
}

/// Tail averages (1/n)Σ_{t=n0+1}^{n0+n} θ_t, one row per replica.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageSamples {
    pub n: usize,
    pub averages: DMatrix<f64>,
}

/// Gaussian initial law ν of the averaged chain.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Allowed relative gap between the empirical and closed-form RMS error.
pub const AVERAGE_RMS_TOLERANCE: f64 = 0.05;

/// Tail-average checks in the linear-Gaussian case: exceedance of both
/// radii for every (n, δ) against Υδ + 3 binomial σ, RMS error against the
/// closed-form law, and the n^{−1/2} rate.
#[allow(clippy::too_many_arguments)]
pub fn check_pr_average_bound(
    samples: &[AverageSamples],
    spec: &ProblemSpec,
    noise: &NoiseModel,
    beta: f64,
    n0: usize,
    deltas: &[f64],
    nu: &InitialLaw,
    oracle: &OracleSolution,
) -> Result<Vec<BoundCheck>> {
    require_light_tailed(noise)?;
    if !spec.objective.has_linear_gradient() {
        return Err(Error::Unsupported("tail-average bound needs a linear gradient".into()));
    }
    let report = validate_step_size(spec, beta, None);
    let entry = report.get(TAIL_AVERAGE).expect("tail-average entry present");
    if !entry.admissible {
        return Err(Error::InadmissibleStepSize { beta, condition: TAIL_AVERAGE.into(), threshold: entry.threshold });
    }
    if samples.is_empty() || deltas.is_empty() {
        return Err(Error::arg("n", "need at least one averaging length and one delta"));
    }
    let k = bounds::k_lip(spec)?;
    let ratio = oracle::density_ratio_sup(&nu.mean, &nu.cov, &oracle.stat_mean, &oracle.stat_cov)?;
    let w2 = oracle::gaussian_w2(&nu.mean, &nu.cov, &oracle.stat_mean, &oracle.stat_cov)?;
    let rho = bounds::alpha_w(spec, beta);
    let ups = bounds::upsilon(rho, n0, ratio);
    let mut dev = Vec::new();
    let mut dev_exp = Vec::new();
    let mut rms_points = Vec::new();
    let (mut log_n, mut log_rms) = (Vec::new(), Vec::new());
    for s in samples {
        check_samples(&s.averages, spec)?;
        let reps = s.averages.nrows();
        let dists = distances(&s.averages, &spec.theta_star);
        let var_term = bounds::average_variance_term(spec, beta, n0, s.n, w2 * w2);
        for &d in deltas {
            let (p, slack) = allowed_frequency(ups * d, reps);
            let r = var_term + bounds::average_deviation_term(k, spec, beta, s.n, d, false);
            let r_exp = var_term + bounds::average_deviation_term(k, spec, beta, s.n, d, true);
            let key = format!("n={},delta={d}", s.n);
            dev.push(CheckPoint::at_most(key.clone(), stats::frac_exceeding(&dists, r), p, slack));
            dev_exp.push(CheckPoint::at_most(key, stats::frac_exceeding(&dists, r_exp), p, slack));
        }
        let sq: Vec<f64> = dists.iter().map(|x| x * x).collect();
        let rms = stats::mean(&sq).sqrt();
        let (m, c) = oracle::pr_average_law(oracle, &nu.mean, &nu.cov, n0, s.n)?;
        let exact = (c.trace() + (m - &spec.theta_star).norm_squared()).sqrt();
        rms_points.push(CheckPoint::at_most(
            format!("n={}", s.n),
            (rms / exact - 1.0).abs(),
            AVERAGE_RMS_TOLERANCE,
            0.0,
        ));
        log_n.push((s.n as f64).ln());
        log_rms.push(rms.ln());
    }
    let note = format!("Upsilon = {ups:.6e} (M := 1, rho = {rho:.6e}, sup density ratio {ratio:.6e}), W2(nu, pi) = {w2:.6e}");
    let mut out = vec![
        BoundCheck::aggregate("average.deviation", "exceedance frequency", dev)
            .with_flag(REMAINDER_FLAG)
            .with_note(note.clone()),
        BoundCheck::aggregate("average.deviation_subexp", "exceedance frequency", dev_exp)
            .with_flag(REMAINDER_FLAG)
            .with_note(note),
        BoundCheck::aggregate("average.oracle_rms", "|RMS / RMS_exact - 1|", rms_points),
    ];
    if let Some(fit) = stats::linear_fit(&log_n, &log_rms) {
        out.push(
            BoundCheck::between("average.rate", "log RMS vs log n slope", fit.slope, -0.55, -0.45, 0.0)
                .with_note(format!("r^2 = {:.4}", fit.r_squared)),
        );
    }
    Ok(out)
}

/// Escape frequency of max_s ‖θ_s − θ*‖ over C against δ + 3 binomial σ.
pub fn check_minibatch_boundedness(
    max_dists: &[f64],
    radius: f64,
    delta: f64,
    conditions: &MinibatchConditions,
) -> Result<BoundCheck> {
    if max_dists.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let (p, slack) = allowed_frequency(delta, max_dists.len());
    let c = BoundCheck::at_most(
        "minibatch.boundedness",
        format!("P(max_s |theta_s - theta*| > {radius})"),
        stats::frac_exceeding(max_dists, radius),
        p,
        slack,
    )
    .with_note(format!(
        "N/(log(4T/delta)+3d) = {:.4e} (required {:.4e}), beta_max = {:.4e}",
        conditions.batch_ratio, conditions.batch_ratio_required, conditions.beta_max
    ));
    Ok(if conditions.admissible { c } else { c.uninformative("conditions_not_met") })
}

/// Generators of i.i.d. pairs (Ξ, ξ) of a symmetric matrix and a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum MatrixNoiseGenerator {
    /// Ξ = 0, ξ = 0.
    Zero { dim: usize },
    /// Ξ = s(G + Gᵀ)/√2 with G standard Gaussian, ξ ~ N(0, s′²I).
    GaussianWigner { dim: usize, matrix_scale: f64, vector_scale: f64 },
    /// Ξ = XXᵀ − Σ, ξ = −εX with X ~ N(0, Σ) and ε ~ N(0, τ²).
    GaussianDesign { design_cov: DMatrix<f64>, label_std: f64 },
}

/// Root of −1/k − ½log(1 − 2/k) = 1: the sub-exponential constant of Z² − 1
/// for Z standard Gaussian.
pub fn chi_square_psi1_constant() -> f64 {
    let f = |k: f64| -1.0 / k - 0.5 * (1.0 - 2.0 / k).ln() - 1.0;
    let (mut a, mut b) = (2.0 + 1e-12, 10.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    b
}

impl MatrixNoiseGenerator {
    pub fn dim(&self) -> usize {
        match self {
            MatrixNoiseGenerator::Zero { dim } | MatrixNoiseGenerator::GaussianWigner { dim, .. } => *dim,
            MatrixNoiseGenerator::GaussianDesign { design_cov, .. } => design_cov.nrows(),
        }
    }

    /// Certified sub-exponential constants (K_Ξ, K_ξ) of ⟨u, Ξu⟩ and ⟨u, ξ⟩
    /// over unit u.
    pub fn certified_constants(&self) -> (f64, f64) {
        match self {
            MatrixNoiseGenerator::Zero { .. } => (0.0, 0.0),
            MatrixNoiseGenerator::GaussianWigner { matrix_scale, vector_scale, .. } => {
                (*matrix_scale, vector_scale / std::f64::consts::SQRT_2)
            }
            MatrixNoiseGenerator::GaussianDesign { design_cov, label_std } => {
                let lmax = linalg::min_max_eigenvalues(design_cov).1;
                let vec_k = label_std * lmax.sqrt() / (1.0 - (-2.0f64).exp()).sqrt();
                (chi_square_psi1_constant() * lmax, vec_k)
            }
        }
    }

    /// Means of `n` i.i.d. draws.
    pub fn sample_mean<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        let mut v = DVector::zeros(d);
        match self {
            MatrixNoiseGenerator::Zero { .. } => {}
            MatrixNoiseGenerator::GaussianWigner { matrix_scale, vector_scale, .. } => {
                for _ in 0..n {
                    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
                    m += (&g + g.transpose()) * (matrix_scale / std::f64::consts::SQRT_2);
                    v += DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal)) * *vector_scale;
                }
            }
            MatrixNoiseGenerator::GaussianDesign { design_cov, label_std } => {
                let f = linalg::psd_sqrt(design_cov)?;
                for _ in 0..n {
                    let z = DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal));
                    let x = &f * z;
                    m += &x * x.transpose() - design_cov;
                    let eps: f64 = rng.sample::<f64, _>(StandardNormal) * label_std;
                    v -= x * eps;
                }
            }
        }
        let nf = n as f64;
        Ok((m / nf, v / nf))
    }
}

/// Exceedance of ‖Ξ̄‖₂ and ‖ξ̄‖ over their radii, per batch size in
/// `n_grid`, from `trials` independent means each.
pub fn check_matrix_concentration(
    generator: &MatrixNoiseGenerator,
    k_matrix: f64,
    k_vector: f64,
    n_grid: &[usize],
    delta: f64,
    trials: usize,
    master: RngStream,
) -> Result<Vec<BoundCheck>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::arg("delta", "must lie in (0, 1)"));
    }
    let needed = (50.0 / delta).ceil() as usize;
    if trials < needed {
        return Err(Error::TooFewSamples { needed, got: trials });
    }
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::arg("n_grid", "need positive batch sizes"));
    }
    let d = generator.dim();
    let (mut mat_pts, mut vec_pts) = (Vec::new(), Vec::new());
    for &n in n_grid {
        let norms = map_replicas(trials, master.split_named(&format!("batch={n}")), |_, stream| {
            let (m, v) = generator.sample_mean(n, &mut stream.rng())?;
            Ok((linalg::op_norm(&m), v.norm()))
        })?;
        let (p, slack) = allowed_frequency(delta, trials);
        let rm = bounds::matrix_mean_radius(k_matrix, d, n, delta);
        let rv = bounds::vector_mean_radius(k_vector, d, n, delta);
        let mats: Vec<f64> = norms.iter().map(|x| x.0).collect();
        let vecs: Vec<f64> = norms.iter().map(|x| x.1).collect();
        mat_pts.push(CheckPoint::at_most(format!("N={n}"), stats::frac_exceeding(&mats, rm), p, slack));
        vec_pts.push(CheckPoint::at_most(format!("N={n}"), stats::frac_exceeding(&vecs, rv), p, slack));
    }
    Ok(vec![
        BoundCheck::aggregate("matrix.operator_norm", "exceedance frequency of |mean Xi|_2", mat_pts),
        BoundCheck::aggregate("matrix.vector_norm", "exceedance frequency of |mean xi|", vec_pts),
    ])
}

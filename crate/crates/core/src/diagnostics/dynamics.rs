//! Checks on the time evolution of the chain: coupling contraction, TV
//! decay, autocovariance decay and trajectory functionals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::bounds;
use super::concentration::{self, ConcentrationEstimate, Family};
use super::report::{BoundCheck, CheckPoint};
use super::stationary::{check_samples, require_light_tailed};
use super::stats::{self, LinearFit};
use crate::engine::CouplingRun;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{NoiseModel, ProblemSpec};
use crate::oracle::{self, OracleSolution};

/// Relative float tolerance added to exact-equality comparisons.
const FLOAT_TOL: f64 = 1e-9;

/// Per-step contraction of the mean squared distance between coupled
/// chains. With `exact_ratio`, also checks every ratio equals it.
pub fn check_coupling_contraction(
    run: &CouplingRun,
    spec: &ProblemSpec,
    beta: f64,
    exact_ratio: Option<f64>,
) -> Vec<BoundCheck> {
    let bound = bounds::contraction_factor(spec, beta);
    let mut points = Vec::new();
    let mut exact_points = Vec::new();
    let mut ratios = Vec::new();
    for t in 0..run.n_steps {
        let xs: Vec<f64> = run.sq_dists.row(t).iter().copied().collect();
        let ys: Vec<f64> = run.sq_dists.row(t + 1).iter().copied().collect();
        let mx = stats::mean(&xs);
        if mx <= 0.0 {
            continue;
        }
        let r = stats::mean(&ys) / mx;
        let se = stats::ratio_std_error(&xs, &ys);
        ratios.push(r);
        let key = format!("step={t}");
        points.push(CheckPoint::at_most(key.clone(), r, bound, 3.0 * se + FLOAT_TOL * bound));
        if let Some(target) = exact_ratio {
            exact_points.push(CheckPoint::at_most(key, (r - target).abs(), 0.0, 3.0 * se + FLOAT_TOL * target));
        }
    }
    let degenerate = points.is_empty();
    let mut main = BoundCheck::aggregate("coupling.contraction", "mean sq distance ratio per step", points);
    if degenerate {
        main = main.uninformative("degenerate_coupling");
        main.bound = bound;
    } else {
        let t = run.n_steps as f64;
        let first = run.mean_sq_dist(0);
        let last = run.mean_sq_dist(run.n_steps);
        if first > 0.0 && last > 0.0 {
            main = main.with_note(format!(
                "geometric mean ratio {:.6e} over {} steps",
                (last / first).powf(1.0 / t),
                run.n_steps
            ));
        }
    }
    let mut out = vec![main];
    if let Some(target) = exact_ratio {
        let mut c = BoundCheck::aggregate(
            "coupling.oracle_ratio",
            format!("|ratio - {target:.6e}| per step"),
            exact_points,
        );
        if degenerate {
            c = c.uninformative("degenerate_coupling");
        }
        out.push(c);
    }
    out
}

/// The ratio at which shared additive noise cancels exactly: (1 − βμ)²
/// when Σ = μI and the noise is additive, otherwise none.
pub fn exact_coupling_ratio(spec: &ProblemSpec, noise: &NoiseModel, beta: f64) -> Option<f64> {
    let isotropic = (spec.big_l - spec.mu).abs() <= 1e-12 * spec.mu;
    (noise.is_additive() && spec.objective.has_linear_gradient() && isotropic)
        .then(|| (1.0 - beta * spec.mu).powi(2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvCurve {
    pub times: Vec<usize>,
    pub tv: Vec<f64>,
    /// TV level below which differences are estimator noise.
    pub noise_floor: Option<f64>,
}

/// TV(law(θ_t), π) in 1-D from the closed-form marginal laws.
pub fn analytic_tv_curve(oracle: &OracleSolution, theta0: f64, times: &[usize]) -> Result<TvCurve> {
    if oracle.dim() != 1 {
        return Err(Error::Unsupported("closed-form TV curves are one-dimensional".into()));
    }
    let m_inf = oracle.stat_mean[0];
    let v_inf = oracle.stat_cov[(0, 0)];
    let x0 = nalgebra::DVector::from_element(1, theta0);
    let tv = times
        .iter()
        .map(|&t| {
            let (m, c) = oracle::ar1_marginal_law(oracle, &x0, t);
            if c[(0, 0)] <= 0.0 {
                // Dirac against a continuous law.
                Ok(1.0)
            } else {
                oracle::tv_gaussian_1d(m[0], c[(0, 0)], m_inf, v_inf)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TvCurve { times: times.to_vec(), tv, noise_floor: None })
}

/// Number of equal-probability bins for histogram TV.
pub const TV_BINS: usize = 64;

fn bin_edges(reference: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = reference.to_vec();
    sorted.sort_by(f64::total_cmp);
    (1..bins).map(|k| stats::quantile_sorted(&sorted, k as f64 / bins as f64)).collect()
}

fn histogram(xs: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut counts = vec![0.0; edges.len() + 1];
    for x in xs {
        counts[edges.partition_point(|e| e < x)] += 1.0;
    }
    let n = xs.len() as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

fn binned_tv(xs: &[f64], reference_hist: &[f64], edges: &[f64]) -> f64 {
    let h = histogram(xs, edges);
    0.5 * h.iter().zip(reference_hist).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Histogram TV of each snapshot against a reference sample, on
/// [`TV_BINS`] bins at the reference quantiles. The noise floor is the TV
/// between the two halves of the reference, scaled by 1/√2.
pub fn empirical_tv_curve(snapshots: &[Vec<f64>], times: &[usize], reference: &[f64]) -> Result<TvCurve> {
    if snapshots.len() != times.len() {
        return Err(Error::arg("times", "need one time per snapshot"));
    }
    if reference.len() < 2 * TV_BINS {
        return Err(Error::TooFewSamples { needed: 2 * TV_BINS, got: reference.len() });
    }
    let edges = bin_edges(reference, TV_BINS);
    let ref_hist = histogram(reference, &edges);
    let tv = snapshots.iter().map(|s| binned_tv(s, &ref_hist, &edges)).collect();
    let (a, b) = reference.split_at(reference.len() / 2);
    let floor = binned_tv(a, &histogram(b, &edges), &edges) / std::f64::consts::SQRT_2;
    Ok(TvCurve { times: times.to_vec(), tv, noise_floor: Some(floor) })
}

/// Upper edge of the fitting window: above it TV is not yet in its
/// geometric regime.
pub const TV_FIT_MAX: f64 = 0.1;
/// Lower edge of the fitting window for noise-free curves.
pub const TV_FIT_MIN: f64 = 1e-10;

/// Fits log TV against t on points in [max(3·floor, TV_FIT_MIN), TV_FIT_MAX].
pub fn fit_tv_rate(curve: &TvCurve) -> Option<LinearFit> {
    let lo = curve.noise_floor.map_or(TV_FIT_MIN, |f| (3.0 * f).max(TV_FIT_MIN));
    let (xs, ys): (Vec<f64>, Vec<f64>) = curve
        .times
        .iter()
        .zip(&curve.tv)
        .filter(|(_, &v)| v >= lo && v <= TV_FIT_MAX)
        .map(|(&t, &v)| (t as f64, v.ln()))
        .unzip();
    stats::linear_fit(&xs, &ys)
}

/// Allowed excess of the fitted log-rate over log ρ.
pub const TV_RATE_TOLERANCE: f64 = 0.01;
/// Allowed sup-norm gap between the histogram and closed-form TV curves.
pub const TV_CURVE_TOLERANCE: f64 = 0.03;

/// Fitted log TV slope against log ρ, ρ = √((1 − βμ)² + β²L_W), using the
/// closed-form curve when given, else the empirical one; and the sup-norm
/// agreement of the two curves when both are given.
pub fn check_tv_decay(
    analytic: Option<&TvCurve>,
    empirical: Option<&TvCurve>,
    spec: &ProblemSpec,
    beta: f64,
) -> Result<Vec<BoundCheck>> {
    let curve = analytic.or(empirical).ok_or_else(|| Error::arg("curve", "need at least one TV curve"))?;
    let log_rho = bounds::alpha_w(spec, beta).ln();
    let label = if analytic.is_some() { "closed-form TV log-slope" } else { "histogram TV log-slope" };
    let rate = match fit_tv_rate(curve) {
        Some(fit) => BoundCheck::at_most("tv.geometric_rate", label, fit.slope, log_rho, TV_RATE_TOLERANCE)
            .with_note(format!("r^2 = {:.4}", fit.r_squared)),
        None => BoundCheck::at_most("tv.geometric_rate", label, f64::NAN, log_rho, TV_RATE_TOLERANCE)
            .uninformative("below_noise_floor"),
    };
    let mut out = vec![rate.with_flag("rho_from_contraction_bound")];
    if let (Some(a), Some(e)) = (analytic, empirical) {
        if a.times != e.times {
            return Err(Error::arg("times", "closed-form and empirical curves must share times"));
        }
        let points = a
            .times
            .iter()
            .zip(a.tv.iter().zip(&e.tv))
            .map(|(t, (x, y))| CheckPoint::at_most(format!("t={t}"), (x - y).abs(), TV_CURVE_TOLERANCE, 0.0))
            .collect();
        out.push(BoundCheck::aggregate("tv.empirical_vs_analytic", "|TV_hist - TV_exact|", points));
    }
    Ok(out)
}

/// Autocovariances E⟨θ_{t0} − θ*, θ_{t0+k} − θ*⟩ for k = 0..series.len()−1,
/// with standard errors.
pub fn autocovariances(series: &[DMatrix<f64>], spec: &ProblemSpec) -> Result<Vec<(f64, f64)>> {
    let first = series.first().ok_or_else(|| Error::arg("series", "empty"))?;
    check_samples(first, spec)?;
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for mut row in c.row_iter_mut() {
            row -= spec.theta_star.transpose();
        }
        c
    };
    let base = center(first);
    series
        .iter()
        .map(|m| {
            if m.shape() != first.shape() {
                return Err(Error::arg("series", "snapshots differ in shape"));
            }
            let cm = center(m);
            let prods: Vec<f64> = base.row_iter().zip(cm.row_iter()).map(|(a, b)| a.dot(&b)).collect();
            Ok((stats::mean(&prods), stats::std_error(&prods)))
        })
        .collect()
}

/// Autocovariance decay bound for linear gradients and, with an oracle, the
/// exact values tr(A^k V). `start_index` is the time of `series[0]` since
/// the chain started from ν and `w2_sq` is W₂²(ν, π).
pub fn check_covariance_decay(
    series: &[DMatrix<f64>],
    spec: &ProblemSpec,
    beta: f64,
    start_index: usize,
    w2_sq: f64,
    oracle: Option<&OracleSolution>,
) -> Result<Vec<BoundCheck>> {
    if !spec.objective.has_linear_gradient() {
        return Err(Error::Unsupported("covariance decay bound needs a linear gradient".into()));
    }
    let acov = autocovariances(series, spec)?;
    let points = acov
        .iter()
        .enumerate()
        .map(|(k, &(c, se))| {
            CheckPoint::at_most(
                format!("lag={k}"),
                c,
                bounds::covariance_bound(spec, beta, k, start_index, w2_sq),
                3.0 * se,
            )
        })
        .collect();
    let mut out = vec![BoundCheck::aggregate("covariance.decay_bound", "E<theta_i - theta*, theta_j - theta*>", points)];
    if let Some(o) = oracle {
        let mut ak = DMatrix::<f64>::identity(o.dim(), o.dim());
        let mut pts = Vec::new();
        for (k, &(c, se)) in acov.iter().enumerate() {
            let exact = (&ak * &o.stat_cov).trace();
            pts.push(CheckPoint::at_most(format!("lag={k}"), (c - exact).abs(), 0.0, 3.0 * se + FLOAT_TOL * exact.abs()));
            ak = &o.ar_matrix * ak;
        }
        out.push(BoundCheck::aggregate("covariance.oracle_autocov", "|autocov - tr(A^k V)|", pts));
    }
    Ok(out)
}

/// Concentration constant of F(θ₁, …, θ_n) − EF across replicas against
/// K·C_W·√(β/μ + (n − 1)β²).
pub fn check_trajectory_lipschitz(
    values: &[f64],
    spec: &ProblemSpec,
    noise: &NoiseModel,
    beta: f64,
    n: usize,
    label: &str,
    family: Family,
) -> Result<(BoundCheck, ConcentrationEstimate)> {
    require_light_tailed(noise)?;
    if !matches!(family, Family::SubGaussian | Family::SubExp) {
        return Err(Error::arg("family", "trajectory functionals use the sub-Gaussian or sub-exponential MGF family"));
    }
    if n == 0 {
        return Err(Error::arg("n", "must be at least 1"));
    }
    let k = bounds::k_lip(spec)?;
    let e = concentration::estimate(family, values)?;
    let bound = bounds::trajectory_constant(k, spec, beta, n);
    let check = BoundCheck::at_most(
        "trajectory.lipschitz_concentration",
        format!("{label}, n = {n}"),
        e.constant,
        bound,
        3.0 * e.std_error,
    );
    Ok((check, e))
}

/// Ψ₂ constant of a Gaussian with covariance `cov` projected on its top
/// eigenvector: √(λ_max/2).
pub fn gaussian_psi2_constant(cov: &DMatrix<f64>) -> f64 {
    (linalg::min_max_eigenvalues(cov).1.max(0.0) / 2.0).sqrt()
}

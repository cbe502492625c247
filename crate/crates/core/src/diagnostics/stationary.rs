//! Checks on samples from (approximately) the invariant law.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bounds;
use super::concentration::{self, ConcentrationEstimate, Family};
use super::report::{BoundCheck, NamedEstimate, ScalingFit};
use super::stats;
use crate::error::{Error, Result};
use crate::model::step_size::FINITE_MOMENTS;
use crate::model::{validate_step_size, FiniteMomentsCondition, NoiseModel, ProblemSpec};
use crate::oracle::OracleSolution;

pub(crate) fn check_samples(samples: &DMatrix<f64>, spec: &ProblemSpec) -> Result<()> {
    if samples.ncols() != spec.dim {
        return Err(Error::DimensionMismatch { expected: spec.dim, got: samples.ncols() });
    }
    if samples.nrows() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: samples.nrows() });
    }
    Ok(())
}

/// ‖row − θ*‖ for every row.
pub fn distances(samples: &DMatrix<f64>, theta_star: &DVector<f64>) -> Vec<f64> {
    samples.row_iter().map(|r| (r.transpose() - theta_star).norm()).collect()
}

fn column_means(samples: &DMatrix<f64>) -> DVector<f64> {
    samples.row_mean().transpose()
}

/// Total variance E‖θ − Eθ‖² with its standard error.
fn total_variance(samples: &DMatrix<f64>) -> (f64, f64) {
    let m = column_means(samples);
    let n = samples.nrows() as f64;
    let sq: Vec<f64> = samples.row_iter().map(|r| (r.transpose() - &m).norm_squared()).collect();
    let var = sq.iter().sum::<f64>() / (n - 1.0);
    (var, stats::std_error(&sq))
}

/// Refuses concentration diagnostics on heavy-tailed noise.
pub fn require_light_tailed(noise: &NoiseModel) -> Result<()> {
    if noise.is_light_tailed() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "concentration diagnostics need light-tailed noise, not {}",
            noise.kind().name()
        )))
    }
}

/// Variance and bias bounds of the invariant law, plus E θ = θ* for linear
/// gradients.
pub fn check_variance_bias_bounds(samples: &DMatrix<f64>, spec: &ProblemSpec, beta: f64) -> Result<Vec<BoundCheck>> {
    check_samples(samples, spec)?;
    let n = samples.nrows() as f64;
    let bound = bounds::variance_bound(spec, beta);
    let (var, var_se) = total_variance(samples);
    let mean = column_means(samples);
    let bias = (&mean - &spec.theta_star).norm();
    let bias_se = (var / n).sqrt();
    let mut out = vec![
        BoundCheck::at_most("stationary.variance", "E|theta - E theta|^2", var, bound, 3.0 * var_se),
        BoundCheck::at_most("stationary.bias", "|E theta - theta*|", bias, bound.sqrt(), 3.0 * bias_se),
    ];
    if bound.is_infinite() {
        for c in &mut out {
            c.flags.push("bound_infinite".into());
        }
    }
    if spec.objective.has_linear_gradient() {
        out.push(
            BoundCheck::at_most("stationary.mean_linear", "|E theta - theta*|", bias, 4.0 * bias_se, 0.0)
                .with_note("bound is four standard errors of the sample mean"),
        );
    }
    Ok(out)
}

/// Sample variance and L2 moment against the closed-form invariant law.
pub fn check_oracle_stationary(samples: &DMatrix<f64>, spec: &ProblemSpec, oracle: &OracleSolution) -> Result<Vec<BoundCheck>> {
    check_samples(samples, spec)?;
    let target = oracle.stat_cov.trace();
    let (var, var_se) = total_variance(samples);
    let m = concentration::estimate_moments(samples, &spec.theta_star, 2)?;
    Ok(vec![
        BoundCheck::at_most(
            "stationary.oracle_variance",
            format!("|Var - tr V|, tr V = {target:.6e}"),
            (var - target).abs(),
            0.0,
            3.0 * var_se,
        ),
        BoundCheck::at_most(
            "moments.oracle_l2",
            format!("|M_2 - sqrt(tr V)|, sqrt(tr V) = {:.6e}", target.sqrt()),
            (m.get(2) - target.sqrt()).abs(),
            0.0,
            3.0 * m.std_errors[1],
        ),
    ])
}

/// Result of [`check_concentration_transfer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutput {
    pub checks: Vec<BoundCheck>,
    pub estimates: Vec<NamedEstimate>,
    pub notes: Vec<String>,
}

/// Concentration constants of ‖θ − θ*‖ and of the test functionals
/// {⟨u, θ⟩ : u ∈ `directions`} ∪ {‖θ − θ*‖} against their transferred
/// bounds. `subexp` selects the sub-exponential family for functionals.
pub fn check_concentration_transfer(
    samples: &DMatrix<f64>,
    spec: &ProblemSpec,
    noise: &NoiseModel,
    beta: f64,
    directions: &[DVector<f64>],
    subexp: bool,
) -> Result<TransferOutput> {
    require_light_tailed(noise)?;
    check_samples(samples, spec)?;
    if spec.k_bar.is_none() && spec.k_lip.is_none() {
        return Err(Error::MissingConstant("k_bar"));
    }
    let mut out = TransferOutput { checks: Vec::new(), estimates: Vec::new(), notes: Vec::new() };
    let dists = distances(samples, &spec.theta_star);
    let upper = |e: &ConcentrationEstimate| 3.0 * e.std_error;
    if let Some(kb) = spec.k_bar {
        let e = concentration::estimate_psi2_tilde(&dists)?;
        out.checks.push(BoundCheck::at_most(
            "transfer.psi2_tilde_norm",
            "|theta - theta*|",
            e.constant,
            bounds::norm_psi2_tilde(kb, spec, beta),
            upper(&e),
        ));
        out.estimates.push(NamedEstimate { label: "psi2_tilde |theta - theta*|".into(), estimate: e });
    } else {
        out.notes.push("k_bar absent: norm sub-Gaussian transfer skipped".into());
    }
    match spec.k_bar_subexp {
        Some(k1) if beta <= 1.0 / (2.0 * spec.mu) => {
            let e = concentration::estimate_psi1_tilde(&dists, None)?;
            out.checks.push(BoundCheck::at_most(
                "transfer.psi1_tilde_norm",
                "|theta - theta*|",
                e.constant,
                bounds::norm_psi1_tilde(k1, spec, beta),
                upper(&e),
            ));
            out.estimates.push(NamedEstimate { label: "psi1_tilde |theta - theta*|".into(), estimate: e });
        }
        Some(_) => out.notes.push("beta > 1/(2 mu): norm sub-exponential transfer skipped".into()),
        None => {}
    }
    if let Some(k) = spec.k_lip {
        let bound = bounds::lipschitz_constant(k, spec, beta);
        let (family, claim) = if subexp {
            (Family::SubExp, "transfer.psi1_lipschitz")
        } else {
            (Family::SubGaussian, "transfer.psi2_lipschitz")
        };
        let mut functionals: Vec<(String, Vec<f64>)> = directions
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let u = u.normalize();
                (format!("<u{i}, theta>"), samples.row_iter().map(|r| r.transpose().dot(&u)).collect())
            })
            .collect();
        functionals.push(("|theta - theta*|".into(), dists.clone()));
        for (label, values) in functionals {
            let e = concentration::estimate(family, &values)?;
            out.checks.push(BoundCheck::at_most(claim, label.clone(), e.constant, bound, upper(&e)));
            out.estimates.push(NamedEstimate { label, estimate: e });
        }
        out.notes.push(
            "Lipschitz transfer is checked on a finite family of test functionals; it does not certify all 1-Lipschitz f"
                .into(),
        );
    } else {
        out.notes.push("k_lip absent: Lipschitz-functional transfer skipped".into());
    }
    Ok(out)
}

/// Fits log(constant) against log(β) and checks the slope lies in
/// [0.4, 0.6].
pub fn check_sqrt_beta_scaling(label: &str, betas: &[f64], constants: &[f64]) -> Result<(ScalingFit, BoundCheck)> {
    if betas.len() < 2 || betas.len() != constants.len() {
        return Err(Error::arg("beta_grid", "need at least two step sizes with one constant each"));
    }
    let xs: Vec<f64> = betas.iter().map(|b| b.ln()).collect();
    let ys: Vec<f64> = constants.iter().map(|c| c.ln()).collect();
    let fit = stats::linear_fit(&xs, &ys).ok_or_else(|| Error::arg("beta_grid", "step sizes must differ"))?;
    let check = BoundCheck::between("transfer.sqrt_beta_scaling", label, fit.slope, 0.4, 0.6, 0.0)
        .with_note(format!("r^2 = {:.4}", fit.r_squared));
    Ok((ScalingFit { label: label.into(), xs, ys, fit }, check))
}

/// Default growth per doubling above which a moment counts as divergent.
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 0.25;
/// Largest relative change per doubling for a moment to count as stable.
pub const STABILITY_TOLERANCE: f64 = 0.10;

/// Relative changes of M_p between the nested prefixes n/4, n/2, n.
pub fn moment_growth(dists: &[f64], p: usize) -> Result<Vec<f64>> {
    let n = dists.len();
    let mut values = Vec::with_capacity(3);
    for m in [n / 4, n / 2, n] {
        values.push(concentration::estimate_scalar_moments(&dists[..m], p)?.get(p));
    }
    Ok(values.windows(2).map(|w| w[1] / w[0] - 1.0).collect())
}

/// Finite-moment regime: M_j stable across doublings of the sample, and
/// (optionally) M_{p_div} growing by more than `divergence_threshold` per
/// doubling.
pub fn check_finite_moments(
    dists: &[f64],
    spec: &ProblemSpec,
    beta: f64,
    condition: FiniteMomentsCondition,
    p_div: Option<usize>,
    divergence_threshold: f64,
) -> Result<Vec<BoundCheck>> {
    let report = validate_step_size(spec, beta, Some(condition));
    let entry = report.get(FINITE_MOMENTS).expect("finite-moment entry present");
    if !entry.admissible {
        return Err(Error::InadmissibleStepSize {
            beta,
            condition: FINITE_MOMENTS.into(),
            threshold: entry.threshold,
        });
    }
    let j = condition.j as usize;
    let growth = moment_growth(dists, j)?;
    let worst = growth.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut out = vec![BoundCheck::at_most(
        "finite_moments.stable",
        format!("max relative change of M_{j} per doubling"),
        worst,
        STABILITY_TOLERANCE,
        0.0,
    )];
    if let Some(p) = p_div {
        let g = moment_growth(dists, p)?;
        out.push(BoundCheck::at_least(
            "finite_moments.divergent",
            format!("mean relative growth of M_{p} per doubling"),
            stats::mean(&g),
            divergence_threshold,
            0.0,
        ));
    }
    Ok(out)
}

/// Bin of the drift regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftBin {
    pub mean_v: f64,
    pub mean_next_v: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftOutput {
    pub checks: Vec<BoundCheck>,
    pub bins: Vec<DriftBin>,
}

/// Regression of V(θ_{t+1}) on V(θ_t), V = 1 + ‖θ − θ*‖², over paired rows
/// of `current` and `next`. Binned means (equal-count bins by ‖θ_t − θ*‖)
/// are returned for display.
pub fn check_drift_condition(
    current: &DMatrix<f64>,
    next: &DMatrix<f64>,
    spec: &ProblemSpec,
    beta: f64,
    n_bins: usize,
) -> Result<DriftOutput> {
    check_samples(current, spec)?;
    if next.shape() != current.shape() {
        return Err(Error::arg("next", "must have the same shape as current"));
    }
    let v = |m: &DMatrix<f64>| -> Vec<f64> {
        distances(m, &spec.theta_star).iter().map(|r| 1.0 + r * r).collect()
    };
    let xs = v(current);
    let ys = v(next);
    let fit = stats::linear_fit(&xs, &ys).ok_or_else(|| Error::arg("current", "all iterates at the same distance"))?;
    let slope_bound = bounds::drift_slope(spec, beta);
    let intercept_bound = bounds::drift_intercept(spec, beta);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let n_bins = n_bins.clamp(1, xs.len());
    let bins = (0..n_bins)
        .map(|b| {
            let idx = &order[b * xs.len() / n_bins..(b + 1) * xs.len() / n_bins];
            DriftBin {
                mean_v: idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64,
                mean_next_v: idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64,
                count: idx.len(),
            }
        })
        .collect();
    Ok(DriftOutput {
        checks: vec![
            BoundCheck::at_most("drift.slope", "regression slope", fit.slope, slope_bound, 3.0 * fit.slope_se),
            BoundCheck::at_most(
                "drift.intercept",
                "regression intercept",
                fit.intercept,
                intercept_bound,
                3.0 * fit.intercept_se,
            ),
        ],
        bins,
    })
}

/// Whether two snapshots (at T/2 and T) look like draws from the same law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurnIn {
    pub attested: bool,
    /// Largest coordinate-wise |Δmean|/se.
    pub mean_z: f64,
    /// |Δ total variance|/se.
    pub var_z: f64,
}

pub const BURN_IN_FLAG: &str = "burn_in_not_attested";

pub fn attest_burn_in(half: &DMatrix<f64>, full: &DMatrix<f64>) -> BurnIn {
    let n1 = half.nrows() as f64;
    let n2 = full.nrows() as f64;
    let mut mean_z: f64 = 0.0;
    for j in 0..half.ncols() {
        let a: Vec<f64> = half.column(j).iter().copied().collect();
        let b: Vec<f64> = full.column(j).iter().copied().collect();
        let se = (stats::variance(&a) / n1 + stats::variance(&b) / n2).sqrt();
        let diff = (stats::mean(&a) - stats::mean(&b)).abs();
        mean_z = mean_z.max(if se > 0.0 { diff / se } else if diff > 0.0 { f64::INFINITY } else { 0.0 });
    }
    let (v1, s1) = total_variance(half);
    let (v2, s2) = total_variance(full);
    let se = (s1 * s1 + s2 * s2).sqrt();
    let var_z = if se > 0.0 { (v1 - v2).abs() / se } else if v1 != v2 { f64::INFINITY } else { 0.0 };
    BurnIn { attested: mean_z < 2.0 && var_z < 2.0, mean_z, var_z }
}

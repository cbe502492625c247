//! Closed-form bounds, evaluated from spec constants each time a check runs.

use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// βσ²/(2μ − β(μ² + L_σ)); infinite when the denominator is not positive.
pub fn variance_bound(spec: &ProblemSpec, beta: f64) -> f64 {
    let denom = 2.0 * spec.mu - beta * (spec.mu * spec.mu + spec.l_sigma);
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        beta * spec.sigma_sq / denom
    }
}

/// One-step squared W₂ contraction factor (1 − βμ)² + β²L_W.
pub fn contraction_factor(spec: &ProblemSpec, beta: f64) -> f64 {
    (1.0 - beta * spec.mu).powi(2) + beta * beta * spec.l_w
}

/// α_W = √((1 − βμ)² + β²L_W), also the bound on the geometric TV rate.
pub fn alpha_w(spec: &ProblemSpec, beta: f64) -> f64 {
    contraction_factor(spec, beta).sqrt()
}

/// C_W = 1/(1 − α_W).
pub fn c_w(spec: &ProblemSpec, beta: f64) -> f64 {
    1.0 / (1.0 - alpha_w(spec, beta))
}

/// Drift slope (1 − βμ)² + β²L_σ for V(θ) = 1 + ‖θ − θ*‖².
pub fn drift_slope(spec: &ProblemSpec, beta: f64) -> f64 {
    (1.0 - beta * spec.mu).powi(2) + beta * beta * spec.l_sigma
}

/// Drift intercept β²σ² + 1 − slope.
pub fn drift_intercept(spec: &ProblemSpec, beta: f64) -> f64 {
    beta * beta * spec.sigma_sq + 1.0 - drift_slope(spec, beta)
}

pub fn k_bar(spec: &ProblemSpec) -> Result<f64> {
    spec.k_bar.ok_or(Error::MissingConstant("k_bar"))
}

pub fn k_bar_subexp(spec: &ProblemSpec) -> Result<f64> {
    spec.k_bar_subexp.ok_or(Error::MissingConstant("k_bar_subexp"))
}

pub fn k_lip(spec: &ProblemSpec) -> Result<f64> {
    spec.k_lip.ok_or(Error::MissingConstant("k_lip"))
}

/// Ψ̃₂ constant of ‖θ − θ*‖ under the invariant law: K̄√(8β/μ).
pub fn norm_psi2_tilde(k_bar: f64, spec: &ProblemSpec, beta: f64) -> f64 {
    k_bar * (8.0 * beta / spec.mu).sqrt()
}

/// Ψ̃₁ constant of ‖θ − θ*‖ under the invariant law: 2K̄₁√(β/μ).
pub fn norm_psi1_tilde(k_bar_subexp: f64, spec: &ProblemSpec, beta: f64) -> f64 {
    2.0 * k_bar_subexp * (beta / spec.mu).sqrt()
}

/// Ψ₂ (or Ψ₁) constant of f(θ) − Ef(θ) for 1-Lipschitz f: K√(β/μ).
pub fn lipschitz_constant(k: f64, spec: &ProblemSpec, beta: f64) -> f64 {
    k * (beta / spec.mu).sqrt()
}

/// Constant for 1-Lipschitz functionals of n consecutive stationary
/// iterates: K·C_W·√(β/μ + (n − 1)β²).
pub fn trajectory_constant(k: f64, spec: &ProblemSpec, beta: f64, n: usize) -> f64 {
    k * c_w(spec, beta) * (beta / spec.mu + (n as f64 - 1.0) * beta * beta).sqrt()
}

/// K̄√(8β log(e/δ)/μ).
pub fn last_iterate_subgaussian_radius(k_bar: f64, spec: &ProblemSpec, beta: f64, delta: f64) -> f64 {
    k_bar * (8.0 * beta * (1.0 - delta.ln()) / spec.mu).sqrt()
}

/// 4eK̄₁ log(2/δ)√(β/μ).
pub fn last_iterate_subexp_radius(k_bar_subexp: f64, spec: &ProblemSpec, beta: f64, delta: f64) -> f64 {
    4.0 * std::f64::consts::E * k_bar_subexp * (2.0 / delta).ln() * (beta / spec.mu).sqrt()
}

/// √(βσ²/μ) + 2K√(β log(1/δ)/μ).
pub fn dimension_free_subgaussian_radius(k: f64, spec: &ProblemSpec, beta: f64, delta: f64) -> f64 {
    (beta * spec.sigma_sq / spec.mu).sqrt() + 2.0 * k * (beta * (1.0 / delta).ln() / spec.mu).sqrt()
}

/// √(βσ²/μ) + 2K·max(√(β log(1/δ)/μ), β log(1/δ)).
pub fn dimension_free_subexp_radius(k: f64, spec: &ProblemSpec, beta: f64, delta: f64) -> f64 {
    let l = (1.0 / delta).ln();
    (beta * spec.sigma_sq / spec.mu).sqrt() + 2.0 * k * (beta * l / spec.mu).sqrt().max(beta * l)
}

/// Non-constructive remainder M·ρᵀ·(1 + ‖θ₀ − θ*‖²) with M := 1.
pub fn tv_remainder(rho: f64, t: usize, start_sq_dist: f64) -> f64 {
    rho.powf(t as f64) * (1.0 + start_sq_dist)
}

/// Variance term √((2/n)((1+α)/(1−α))(α_W^{n0}W₂²(ν,π) + βσ²/μ)) of the
/// tail-average radius, α = 1 − βμ.
pub fn average_variance_term(spec: &ProblemSpec, beta: f64, n0: usize, n: usize, w2_sq: f64) -> f64 {
    let a = 1.0 - beta * spec.mu;
    let inner = alpha_w(spec, beta).powf(n0 as f64) * w2_sq + beta * spec.sigma_sq / spec.mu;
    (2.0 / n as f64 * (1.0 + a) / (1.0 - a) * inner).sqrt()
}

/// Deviation term (2K√(β/μ)/(1 − α_W))·√(βμ + 1/n)·√(log(1/δ)/n), or its
/// maximum with the sub-exponential term log(1/δ)/n.
pub fn average_deviation_term(k: f64, spec: &ProblemSpec, beta: f64, n: usize, delta: f64, subexp: bool) -> f64 {
    let nf = n as f64;
    let l = (1.0 / delta).ln();
    let pre = 2.0 * k * (beta / spec.mu).sqrt() / (1.0 - alpha_w(spec, beta));
    let gauss = (beta * spec.mu + 1.0 / nf).sqrt() * (l / nf).sqrt();
    pre * if subexp { gauss.max(l / nf) } else { gauss }
}

/// Υ = 1 + M·ρ^{n0}·‖dν/dπ‖_∞ with M := 1.
pub fn upsilon(rho: f64, n0: usize, density_ratio: f64) -> f64 {
    1.0 + rho.powf(n0 as f64) * density_ratio
}

/// 2(1 − βμ)^{lag}(α_W^{i}·W₂²(ν,π) + Var), with Var bounded by
/// [`variance_bound`].
pub fn covariance_bound(spec: &ProblemSpec, beta: f64, lag: usize, i: usize, w2_sq: f64) -> f64 {
    let a = 1.0 - beta * spec.mu;
    2.0 * a.powf(lag as f64) * (alpha_w(spec, beta).powf(i as f64) * w2_sq + variance_bound(spec, beta))
}

/// φ(x) = max(x, √x).
pub fn phi(x: f64) -> f64 {
    x.max(x.sqrt())
}

/// 3K_Ξ·φ((log(2/δ) + 3d)/N).
pub fn matrix_mean_radius(k_xi: f64, d: usize, n: usize, delta: f64) -> f64 {
    3.0 * k_xi * phi(((2.0 / delta).ln() + 3.0 * d as f64) / n as f64)
}

/// 4K_ξ·φ((log(2/δ) + 2d)/N).
pub fn vector_mean_radius(k_xi: f64, d: usize, n: usize, delta: f64) -> f64 {
    4.0 * k_xi * phi(((2.0 / delta).ln() + 2.0 * d as f64) / n as f64)
}

/// The two conditions under which minibatch iterates stay within C of θ*
/// for T steps with probability at least 1 − δ.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MinibatchConditions {
    /// N/(log(4T/δ) + 3d).
    pub batch_ratio: f64,
    /// max(1, ((6/μ)·max(3K_Ξ, 4K_ξ/C))²).
    pub batch_ratio_required: f64,
    /// min(μN/(54K_Ξ²(log(4T/δ) + 3d)), 2/(μ + L)).
    pub beta_max: f64,
    pub admissible: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn minibatch_conditions(
    spec: &ProblemSpec,
    k_xi_matrix: f64,
    k_xi_vector: f64,
    radius: f64,
    batch: usize,
    beta: f64,
    steps: usize,
    delta: f64,
) -> MinibatchConditions {
    let mu = spec.mu;
    let denom = (4.0 * steps as f64 / delta).ln() + 3.0 * spec.dim as f64;
    let nf = batch as f64;
    let batch_ratio = nf / denom;
    let batch_ratio_required = ((6.0 / mu) * (3.0 * k_xi_matrix).max(4.0 * k_xi_vector / radius)).powi(2).max(1.0);
    let beta_noise = if k_xi_matrix > 0.0 { mu * nf / (54.0 * k_xi_matrix * k_xi_matrix * denom) } else { f64::INFINITY };
    let beta_max = beta_noise.min(2.0 / (mu + spec.big_l));
    MinibatchConditions {
        batch_ratio,
        batch_ratio_required,
        beta_max,
        admissible: batch_ratio >= batch_ratio_required && beta <= beta_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_reference_values() {
        let mut spec = ProblemSpec::scalar_quadratic(0.0, 1.0).unwrap();
        spec.sigma_sq = 1.0;
        assert_relative_eq!(variance_bound(&spec, 0.1), 0.1 / 1.9, max_relative = 1e-15);
        spec.l_w = 1.0;
        assert_relative_eq!(contraction_factor(&spec, 0.1), 0.82, max_relative = 1e-15);
        assert_relative_eq!(phi(0.25), 0.5);
        assert_relative_eq!(phi(4.0), 4.0);
    }
}

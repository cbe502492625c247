mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use common::*;
use sgdchain::diagnostics::{
    analytic_tv_curve, bounds, check_covariance_decay, check_finite_moments, check_last_iterate_deviation,
    check_matrix_concentration, check_oracle_stationary, check_sqrt_beta_scaling, check_tv_decay,
    check_variance_bias_bounds, estimate_moments, estimate_psi1_tilde, estimate_psi2, estimate_psi2_tilde,
    geometric_sum_bound, trinomial_identity, BoundCheck, MatrixNoiseGenerator, RemainderMode, CLAIMS,
};
use sgdchain::engine::{run_ensemble, ChainVariant, InitSampler, RunOptions};
use sgdchain::model::{FiniteMomentsCondition, NoiseModel, ProblemSpec, DESIGN_CONSTANT_DRAWS};
use sgdchain::oracle::oracle_for;
use sgdchain::RngStream;

const BETA: f64 = 0.1;

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = test_rng(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn stationary_samples(n: usize, seed: u64) -> DMatrix<f64> {
    let (spec, noise) = reference_problem();
    let v = oracle_for(&spec, &noise, BETA).unwrap().stat_cov;
    let init = InitSampler::Gaussian { mean: DVector::zeros(1), cov: v };
    run_ensemble(&spec, &noise, BETA, ChainVariant::Plain, &init, 1, &[1], n, RngStream::new(seed), &RunOptions::default())
        .unwrap()
        .last_snapshot()
        .clone()
}

fn certified_reference() -> (ProblemSpec, NoiseModel) {
    let (spec, noise) = reference_problem();
    let spec = sgdchain::diagnostics::certify_noise_constants(&spec, &noise, 100_000, RngStream::new(1)).unwrap();
    (spec, noise)
}

/// Smallest K with E exp(c²Z²/K²) ≤ exp(c²) for every c on the grid, using
/// E exp(sZ²) = (1 − 2s)^{−1/2}.
fn half_normal_psi2_tilde_oracle() -> f64 {
    (1..=9)
        .map(|j| {
            let c = f64::from(j) / 9.0;
            let slack = |k: f64| -0.5 * (1.0 - 2.0 * c * c / (k * k)).ln() - c * c;
            let (mut lo, mut hi) = ((2.0f64).sqrt() * c + 1e-12, 10.0);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if slack(m) > 0.0 {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            hi
        })
        .fold(0.0, f64::max)
}

#[test]
fn zero_samples_sit_at_floor() {
    let zeros = vec![0.0; 20_000];
    assert!(estimate_psi2_tilde(&zeros).unwrap().constant <= 1e-10);
    assert!(estimate_psi2(&zeros).unwrap().constant <= 1e-10);
    let m = estimate_moments(&DMatrix::zeros(500, 2), &DVector::zeros(2), 6).unwrap();
    assert!(m.values.iter().all(|&v| v == 0.0));
}

#[test]
fn half_normal_psi2_tilde_matches_oracle() {
    let xs: Vec<f64> = normals(3, 200_000).into_iter().map(f64::abs).collect();
    let oracle = half_normal_psi2_tilde_oracle();
    assert!((1.0..=2.5).contains(&oracle));
    let e = estimate_psi2_tilde(&xs).unwrap();
    assert!((1.0..=2.5).contains(&e.constant), "{}", e.constant);
    assert_relative_eq!(e.constant, oracle, max_relative = 0.03);
}

#[test]
fn estimators_are_positively_homogeneous() {
    let xs: Vec<f64> = normals(4, 50_000).into_iter().map(f64::abs).collect();
    let scaled: Vec<f64> = xs.iter().map(|x| 3.5 * x).collect();
    let a = estimate_psi2_tilde(&xs).unwrap().constant;
    let b = estimate_psi2_tilde(&scaled).unwrap().constant;
    assert_relative_eq!(b, 3.5 * a, max_relative = 1e-5);
    let a = estimate_psi1_tilde(&xs, None).unwrap().constant;
    let b = estimate_psi1_tilde(&scaled, None).unwrap().constant;
    assert_relative_eq!(b, 3.5 * a, max_relative = 1e-12);
}

#[test]
fn exponential_psi1_tilde_is_one() {
    let mut rng = test_rng(5);
    let xs: Vec<f64> = (0..100_000).map(|_| rng.sample(Exp1)).collect();
    let e = estimate_psi1_tilde(&xs, None).unwrap();
    assert!(e.constant <= 1.0 + 3.0 * e.std_error, "{} ± {}", e.constant, e.std_error);
    let constant = vec![2.5; 10_000];
    assert_relative_eq!(estimate_psi1_tilde(&constant, None).unwrap().constant, 2.5, max_relative = 1e-12);
}

#[test]
fn psi1_tilde_at_most_three_times_psi2_tilde() {
    let mut rng = test_rng(6);
    for seed in 0..5u64 {
        let scale = rng.random_range(0.1..10.0);
        let xs: Vec<f64> = normals(seed + 10, 20_000).into_iter().map(|x| scale * x.abs()).collect();
        let k2 = estimate_psi2_tilde(&xs).unwrap().constant;
        let k1 = estimate_psi1_tilde(&xs, None).unwrap().constant;
        assert!(k1 <= 3.0 * k2);
    }
}

#[test]
fn moments_are_monotone_and_match_oracle() {
    let s = stationary_samples(100_000, 7);
    let m = estimate_moments(&s, &DVector::zeros(1), 8).unwrap();
    assert!(m.values.windows(2).all(|w| w[0] <= w[1]));
    assert_relative_eq!(m.get(2), (1.0f64 / 19.0).sqrt(), max_relative = 0.03);
}

#[test]
fn variance_and_oracle_checks_pass_on_stationary_samples() {
    let (spec, noise) = reference_problem();
    let s = stationary_samples(100_000, 8);
    let checks = check_variance_bias_bounds(&s, &spec, BETA).unwrap();
    let var = checks.iter().find(|c| c.claim_id == "stationary.variance").unwrap();
    assert_relative_eq!(var.bound, 0.1 / 1.9, max_relative = 1e-12);
    assert!(checks.iter().all(|c| c.pass));
    let oracle = oracle_for(&spec, &noise, BETA).unwrap();
    assert!(check_oracle_stationary(&s, &spec, &oracle).unwrap().iter().all(|c| c.pass));
}

#[test]
fn variance_bound_vanishes_with_step_size() {
    let (spec, _) = reference_problem();
    assert!(bounds::variance_bound(&spec, 1e-8) < 1e-7);
    assert_relative_eq!(bounds::variance_bound(&spec, 1e-8) / 1e-8, 0.5, max_relative = 1e-6);
}

#[test]
fn contraction_factor_reference_value() {
    let (mut spec, _) = reference_problem();
    spec.l_w = 1.0;
    assert_relative_eq!(bounds::contraction_factor(&spec, 0.1), 0.82, max_relative = 1e-14);
    assert!(bounds::contraction_factor(&spec, 0.5) < 1.0);
}

#[test]
fn analytic_tv_starts_at_one_and_decays_at_contraction_rate() {
    let (spec, noise) = reference_problem();
    let oracle = oracle_for(&spec, &noise, BETA).unwrap();
    let times: Vec<usize> = (0..=200).collect();
    let curve = analytic_tv_curve(&oracle, 1.0, &times).unwrap();
    assert_eq!(curve.tv[0], 1.0);
    assert!(curve.tv.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    let checks = check_tv_decay(Some(&curve), None, &spec, BETA).unwrap();
    let rate = checks.iter().find(|c| c.claim_id == "tv.geometric_rate").unwrap();
    assert!(rate.empirical <= 0.9f64.ln() + 0.01, "{}", rate.empirical);
}

#[test]
fn last_iterate_exceedance_within_delta() {
    let (spec, noise) = certified_reference();
    let s = stationary_samples(20_000, 9);
    let checks =
        check_last_iterate_deviation(&s, &spec, &noise, BETA, &[0.1, 0.5], 500, 0.0, RemainderMode::Zero).unwrap();
    assert!(!checks.is_empty());
    for c in &checks {
        for p in &c.details {
            let delta: f64 = p.key.trim_start_matches("delta=").parse().unwrap();
            assert!(p.empirical <= delta + 3.0 * binomial_sigma(delta, 20_000), "{} {}", c.claim_id, p.key);
        }
    }
}

#[test]
fn zero_noise_never_exceeds_radius() {
    let noise = NoiseModel::isotropic_gaussian(1, 0.0);
    let mut spec = ProblemSpec::scalar_quadratic(0.0, 1.0).unwrap();
    spec = noise.apply_constants(&spec, DESIGN_CONSTANT_DRAWS, RngStream::new(0)).unwrap();
    spec.k_bar = Some(0.0);
    spec.k_bar_subexp = Some(0.0);
    spec.k_lip = Some(0.0);
    let ens = run_ensemble(&spec, &noise, BETA, ChainVariant::Plain, &InitSampler::Point(DVector::zeros(1)), 400, &[400], 1000, RngStream::new(0), &RunOptions::default())
        .unwrap();
    assert!(ens.last_snapshot().iter().all(|&x| x == 0.0));
    let checks = check_last_iterate_deviation(ens.last_snapshot(), &spec, &noise, BETA, &[0.05], 400, 1.0, RemainderMode::Zero)
        .unwrap();
    assert!(checks.iter().all(|c| c.empirical == 0.0 && c.pass));
}

#[test]
fn covariance_bound_holds_at_every_lag() {
    let (spec, noise) = reference_problem();
    let oracle = oracle_for(&spec, &noise, BETA).unwrap();
    let lags: Vec<usize> = (0..=20).collect();
    let init = InitSampler::Gaussian { mean: DVector::zeros(1), cov: oracle.stat_cov.clone() };
    let ens = run_ensemble(&spec, &noise, BETA, ChainVariant::Plain, &init, 20, &lags, 50_000, RngStream::new(10), &RunOptions::default())
        .unwrap();
    let checks = check_covariance_decay(&ens.snapshots, &spec, BETA, 0, 0.0, Some(&oracle)).unwrap();
    assert!(checks.iter().all(|c| c.pass), "{:?}", checks.iter().map(BoundCheck::summary_line).collect::<Vec<_>>());
    let decay = checks.iter().find(|c| c.claim_id == "covariance.decay_bound").unwrap();
    assert_eq!(decay.details.len(), 21);
    assert_relative_eq!(decay.details[0].bound, 2.0 / 19.0, max_relative = 1e-12);
}

#[test]
fn trajectory_constant_at_one_step_dominates_lipschitz_constant() {
    let (spec, _) = reference_problem();
    let k = 0.7;
    assert!(bounds::trajectory_constant(k, &spec, BETA, 1) >= bounds::lipschitz_constant(k, &spec, BETA));
}

#[test]
fn sqrt_beta_scaling_recovers_half_slope() {
    let betas = [0.0125, 0.025, 0.05, 0.1];
    let consts: Vec<f64> = betas.iter().map(|b: &f64| 1.7 * b.sqrt()).collect();
    let (fit, check) = check_sqrt_beta_scaling("exact", &betas, &consts).unwrap();
    assert_relative_eq!(fit.fit.slope, 0.5, max_relative = 1e-12);
    assert!(check.pass);
}

#[test]
fn student_t_second_moment_is_stable() {
    let noise = NoiseModel::AdditiveStudentT { dof: 5.0, scale: 1.0 };
    let spec = ProblemSpec::scalar_quadratic(0.0, 1.0).unwrap();
    let spec = noise.apply_constants(&spec, DESIGN_CONSTANT_DRAWS, RngStream::new(0)).unwrap();
    let ens = run_ensemble(&spec, &noise, BETA, ChainVariant::Plain, &InitSampler::Point(DVector::zeros(1)), 200, &[200], 40_000, RngStream::new(12), &RunOptions::default())
        .unwrap();
    let dists: Vec<f64> = ens.last_snapshot().column(0).iter().map(|x| x.abs()).collect();
    let checks = check_finite_moments(&dists, &spec, BETA, FiniteMomentsCondition { j: 2, k: 0.0 }, None, 0.25).unwrap();
    assert!(checks[0].pass, "{}", checks[0].summary_line());
}

#[test]
fn concentration_checks_refuse_heavy_tails() {
    let noise = NoiseModel::AdditiveStudentT { dof: 3.0, scale: 1.0 };
    let mut spec = ProblemSpec::scalar_quadratic(0.0, 1.0).unwrap();
    spec.k_bar = Some(1.0);
    let s = DMatrix::from_element(20_000, 1, 0.1);
    assert!(check_last_iterate_deviation(&s, &spec, &noise, BETA, &[0.1], 10, 0.0, RemainderMode::Zero).is_err());
}

#[test]
fn zero_matrix_noise_never_exceeds() {
    let gen = MatrixNoiseGenerator::Zero { dim: 5 };
    let checks = check_matrix_concentration(&gen, 1.0, 1.0, &[100, 200], 0.05, 1000, RngStream::new(0)).unwrap();
    assert!(checks.iter().all(|c| c.empirical == 0.0 && c.pass));
}

#[test]
fn wigner_matrix_concentration_holds() {
    let gen = MatrixNoiseGenerator::GaussianWigner { dim: 5, matrix_scale: 1.0, vector_scale: 1.0 };
    let (km, kv) = gen.certified_constants();
    let checks = check_matrix_concentration(&gen, km, kv, &[200], 0.05, 1000, RngStream::new(1)).unwrap();
    let allowed = 0.05 + 3.0 * binomial_sigma(0.05, 1000);
    assert!(checks.iter().all(|c| c.empirical <= allowed));
}

#[test]
fn matrix_radius_decreases_with_batch_size() {
    let radii: Vec<f64> = [40usize, 80, 160, 320, 640].iter().map(|&n| bounds::matrix_mean_radius(1.0, 5, n, 0.05)).collect();
    assert!(radii.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn geometric_sum_reference_values() {
    assert_relative_eq!(geometric_sum_bound(2.5, 0.3, 1).unwrap(), 2.5, max_relative = 1e-15);
    assert_relative_eq!(geometric_sum_bound(1.0, 0.5, 2).unwrap(), 3.0, max_relative = 1e-15);
    let direct: f64 = 2.0 + 2.0 * 0.5;
    assert_relative_eq!(direct, 3.0);
}

#[test]
fn trinomial_reference_values() {
    assert_eq!(trinomial_identity(2, 2).unwrap(), (6, 6));
    assert_eq!(trinomial_identity(1, 2).unwrap(), (1, 1));
}

#[test]
fn claim_ids_are_unique_and_described() {
    let mut ids: Vec<&str> = CLAIMS.iter().map(|(id, _)| *id).collect();
    let n = ids.len();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), n);
    assert!(CLAIMS.iter().all(|(_, d)| !d.is_empty()));
}

mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};

use common::*;
use sgdchain::model::{
    gradient, sample_gradient, sample_gradients, step_size, validate_step_size, NoiseModel, ObjectiveKind,
    ProblemSpec, DESIGN_CONSTANT_DRAWS,
};
use sgdchain::RngStream;

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

#[test]
fn quadratic_gradient_at_optimum_is_zero() {
    let spec = ProblemSpec::quadratic(DVector::from_vec(vec![1.0, -2.0]), diag(&[1.0, 3.0])).unwrap();
    let g = gradient(&spec, &spec.theta_star).unwrap();
    assert_eq!(g, DVector::zeros(2));
}

#[test]
fn quadratic_gradient_is_sigma_times_offset() {
    let spec = ProblemSpec::quadratic(DVector::zeros(2), diag(&[1.0, 3.0])).unwrap();
    let g = gradient(&spec, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
    assert_eq!(g, DVector::from_vec(vec![1.0, 3.0]));
}

#[test]
fn quadratic_constants_are_extreme_eigenvalues() {
    let mut rng = test_rng(1);
    for _ in 0..20 {
        let sigma = random_spd(&mut rng, 4, 0.3, 7.0);
        let spec = ProblemSpec::quadratic(DVector::zeros(4), sigma).unwrap();
        assert_relative_eq!(spec.mu, 0.3, max_relative = 1e-9);
        assert_relative_eq!(spec.big_l, 7.0, max_relative = 1e-9);
        assert!(spec.mu <= spec.big_l);
    }
}

#[test]
fn indefinite_sigma_is_rejected() {
    assert!(ProblemSpec::quadratic(DVector::zeros(2), diag(&[1.0, -1.0])).is_err());
    assert!(ProblemSpec::scalar_quadratic(0.0, 0.0).is_err());
}

#[test]
fn logistic_gradient_vanishes_at_optimum() {
    let spec = ProblemSpec::logistic_ball(DVector::from_element(1, 0.5), DMatrix::identity(1, 1), 3.0, None).unwrap();
    assert_eq!(spec.objective, ObjectiveKind::LogisticBall);
    let g = gradient(&spec, &spec.theta_star).unwrap();
    assert!(g.norm() < 1e-10, "{g}");
    assert!(spec.mu > 0.0 && spec.mu <= spec.big_l);
}

#[test]
fn logistic_domain_is_enforced() {
    let spec = ProblemSpec::logistic_ball(DVector::zeros(2), DMatrix::identity(2, 2), 1.0, None).unwrap();
    assert!(gradient(&spec, &DVector::from_vec(vec![2.0, 0.0])).is_err());
}

#[test]
fn zero_additive_noise_returns_exact_gradient() {
    let spec = ProblemSpec::quadratic(DVector::zeros(2), diag(&[1.0, 2.0])).unwrap();
    let noise = NoiseModel::AdditiveGaussian { cov: DMatrix::zeros(2, 2) };
    let theta = DVector::from_vec(vec![0.3, -0.7]);
    let g = sample_gradient(&spec, &noise, &theta, RngStream::new(5)).unwrap();
    assert_eq!(g, gradient(&spec, &theta).unwrap());
}

fn assert_unbiased(spec: &ProblemSpec, noise: &NoiseModel, theta: &DVector<f64>, n: usize) {
    let (g, draws) = sample_gradients(spec, noise, theta, n, RngStream::new(17)).unwrap();
    for i in 0..spec.dim {
        let xs: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let (m, se) = (mean(&xs), std_error(&xs));
        assert!((m - g[i]).abs() <= 4.0 * se, "coord {i}: mean {m} vs {} (se {se})", g[i]);
    }
}

#[test]
fn every_noise_model_is_unbiased() {
    let theta = DVector::from_vec(vec![0.5, -1.0]);
    let quad = ProblemSpec::quadratic(DVector::zeros(2), diag(&[1.0, 2.0])).unwrap();
    assert_unbiased(&quad, &NoiseModel::isotropic_gaussian(2, 1.0), &theta, 1_000_000);
    assert_unbiased(&quad, &NoiseModel::AdditiveStudentT { dof: 5.0, scale: 1.0 }, &theta, 1_000_000);
    let ls = ProblemSpec::least_squares(DVector::zeros(2), diag(&[1.0, 2.0])).unwrap();
    assert_unbiased(&ls, &NoiseModel::RandomDesignGaussian { label_std: 0.5 }, &theta, 1_000_000);
}

#[test]
fn random_design_second_moment_within_growth_bound() {
    let ls = ProblemSpec::least_squares(DVector::zeros(3), diag(&[1.0, 2.0, 3.0])).unwrap();
    let noise = NoiseModel::RandomDesignGaussian { label_std: 0.5 };
    let spec = noise.apply_constants(&ls, DESIGN_CONSTANT_DRAWS, RngStream::new(3)).unwrap();
    let theta = DVector::from_vec(vec![2.0, 0.0, 0.0]);
    let (g, draws) = sample_gradients(&spec, &noise, &theta, 200_000, RngStream::new(4)).unwrap();
    let sq: Vec<f64> = draws.iter().map(|d| (d - &g).norm_squared()).collect();
    let bound = spec.l_sigma * 4.0 + spec.sigma_sq;
    assert!(mean(&sq) <= bound + 3.0 * std_error(&sq), "{} > {bound}", mean(&sq));
}

#[test]
fn additive_gaussian_constants_are_exact() {
    let spec = ProblemSpec::quadratic(DVector::zeros(2), diag(&[1.0, 2.0])).unwrap();
    let noise = NoiseModel::AdditiveGaussian { cov: diag(&[0.5, 1.5]) };
    let c = noise.constants(&spec, 1000, RngStream::new(0)).unwrap();
    assert_eq!(c.l_sigma, 0.0);
    assert_eq!(c.l_w, 0.0);
    assert_relative_eq!(c.sigma_sq, 2.0, max_relative = 1e-12);
}

#[test]
fn same_stream_same_gradient_draw() {
    let ls = ProblemSpec::least_squares(DVector::zeros(2), diag(&[1.0, 2.0])).unwrap();
    let noise = NoiseModel::RandomDesignGaussian { label_std: 1.0 };
    let theta = DVector::from_vec(vec![1.0, 1.0]);
    let a = sample_gradient(&ls, &noise, &theta, RngStream::new(9).split(4)).unwrap();
    let b = sample_gradient(&ls, &noise, &theta, RngStream::new(9).split(4)).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
}

fn with_constants(mu: f64, big_l: f64, l_sigma: f64) -> ProblemSpec {
    let mut spec = ProblemSpec::quadratic(DVector::zeros(2), diag(&[mu, big_l])).unwrap();
    spec.l_sigma = l_sigma;
    spec.sigma_sq = 1.0;
    spec
}

#[test]
fn ergodicity_threshold_reference_values() {
    let ok = validate_step_size(&with_constants(1.0, 1.0, 0.0), 0.5, None);
    let e = ok.get(step_size::ERGODICITY).unwrap();
    assert_relative_eq!(e.threshold, 1.0);
    assert!(e.admissible);

    let bad = validate_step_size(&with_constants(1.0, 1.0, 3.0), 1.0, None);
    let e = bad.get(step_size::ERGODICITY).unwrap();
    assert_relative_eq!(e.threshold, 0.5);
    assert!(!e.admissible);
}

#[test]
fn dimension_free_threshold_reference_value() {
    let r = validate_step_size(&with_constants(1.0, 1.0, 0.0), 0.5, None);
    let e = r.get(step_size::DIMENSION_FREE_DEVIATION).unwrap();
    assert_relative_eq!(e.threshold, 1.0);
    assert!(e.admissible);
}

#[test]
fn admissibility_matches_threshold_comparison() {
    let spec = with_constants(0.7, 2.0, 0.4);
    for beta in [0.01, 0.1, 0.5, 0.9, 1.2, 3.0] {
        for c in validate_step_size(&spec, beta, None).conditions {
            let expected = if c.strict { beta < c.threshold } else { beta <= c.threshold };
            assert_eq!(c.admissible, expected, "{} at beta {beta}", c.condition_id);
        }
    }
}

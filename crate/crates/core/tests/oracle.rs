mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erf;

use common::*;
use sgdchain::engine::{run_ensemble, ChainVariant, InitSampler, RunOptions};
use sgdchain::model::{NoiseModel, ProblemSpec};
use sgdchain::oracle::{
    ar1_marginal_law, gaussian_w2, lyapunov_residual, oracle_for, pr_average_law, solve_stationary_cov,
    stationary_average_variance_1d, tv_gaussian_1d, OracleSolution,
};
use sgdchain::RngStream;

fn scalar(a: f64, q: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, q))
}

fn reference_oracle() -> OracleSolution {
    let (spec, noise) = reference_problem();
    oracle_for(&spec, &noise, 0.1).unwrap()
}

#[test]
fn scalar_lyapunov_fixed_point() {
    let (a, q) = scalar(0.9, 0.01);
    let v = solve_stationary_cov(&a, &q).unwrap();
    assert_relative_eq!(v[(0, 0)], scalar_fixed_point(0.9, 0.1), max_relative = 1e-13);
    assert_relative_eq!(v[(0, 0)], 0.01 / 0.19, max_relative = 1e-13);
}

#[test]
fn zero_noise_has_zero_covariance() {
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
    let v = solve_stationary_cov(&a, &DMatrix::zeros(2, 2)).unwrap();
    assert_eq!(v.norm(), 0.0);
}

#[test]
fn diagonal_systems_decouple() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.8]));
    let q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.3]));
    let v = solve_stationary_cov(&a, &q).unwrap();
    assert_relative_eq!(v[(0, 0)], 2.0 / 0.75, max_relative = 1e-13);
    assert_relative_eq!(v[(1, 1)], 0.3 / 0.36, max_relative = 1e-13);
    assert!(v[(0, 1)].abs() < 1e-14 && v[(1, 0)].abs() < 1e-14);
}

#[test]
fn unstable_system_is_rejected() {
    let (a, q) = scalar(1.0, 1.0);
    assert!(solve_stationary_cov(&a, &q).is_err());
}

#[test]
fn random_stable_systems_have_tiny_residual() {
    let mut rng = test_rng(2);
    for d in [1, 2, 5, 10, 20] {
        let m = random_matrix(&mut rng, d, d);
        let radius = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let a = m * (0.9 / radius);
        let b = random_matrix(&mut rng, d, d);
        let q = &b * b.transpose();
        let v = solve_stationary_cov(&a, &q).unwrap();
        assert!(lyapunov_residual(&a, &q, &v) <= 1e-12, "d={d}");
        assert!((&v - v.transpose()).norm() <= 1e-12 * v.norm());
        assert!(v.symmetric_eigenvalues().min() >= -1e-10 * v.norm());
    }
}

#[test]
fn oracle_for_reference_config() {
    let o = reference_oracle();
    assert_relative_eq!(o.ar_matrix[(0, 0)], 0.9, max_relative = 1e-15);
    assert_relative_eq!(o.stat_cov[(0, 0)], 1.0 / 19.0, max_relative = 1e-13);
    assert!(o.relative_residual <= 1e-12);
}

#[test]
fn oracle_refuses_nonlinear_or_non_gaussian_noise() {
    let (spec, _) = reference_problem();
    assert!(oracle_for(&spec, &NoiseModel::AdditiveStudentT { dof: 5.0, scale: 1.0 }, 0.1).is_err());
    let ls = ProblemSpec::least_squares(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
    assert!(oracle_for(&ls, &NoiseModel::RandomDesignGaussian { label_std: 1.0 }, 0.1).is_err());
}

#[test]
fn w2_reference_values() {
    let c = DMatrix::identity(1, 1);
    let m0 = DVector::zeros(1);
    let m = DVector::from_element(1, 2.5);
    assert_relative_eq!(gaussian_w2(&m0, &c, &m, &c).unwrap(), 2.5, max_relative = 1e-12);
    assert_eq!(gaussian_w2(&m, &c, &m, &c).unwrap(), 0.0);
    let (v1, v2) = (DMatrix::from_element(1, 1, 4.0), DMatrix::from_element(1, 1, 0.25));
    assert_relative_eq!(gaussian_w2(&m0, &v1, &m0, &v2).unwrap(), 1.5, max_relative = 1e-12);
}

#[test]
fn marginal_law_reference_values() {
    let (spec, noise) = reference_problem();
    let o = oracle_for(&spec, &noise, 0.1).unwrap();
    let x0 = DVector::from_element(1, 1.0);
    let (m, c) = ar1_marginal_law(&o, &x0, 0);
    assert_eq!(m, x0);
    assert_eq!(c.norm(), 0.0);
    let (m, c) = ar1_marginal_law(&o, &x0, 2);
    assert_relative_eq!(m[0], 0.81, max_relative = 1e-14);
    assert_relative_eq!(c[(0, 0)], 0.01 * 1.81, max_relative = 1e-13);
    let (m, c) = ar1_marginal_law(&o, &x0, 2000);
    assert!((m - &o.stat_mean).norm() <= 1e-10);
    assert!((c - &o.stat_cov).norm() <= 1e-10);
}

#[test]
fn marginal_covariance_grows_monotonically() {
    let spec = ProblemSpec::quadratic(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
    let noise = NoiseModel::AdditiveGaussian { cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]) };
    let o = oracle_for(&spec, &noise, 0.2).unwrap();
    let x0 = DVector::from_vec(vec![1.0, -1.0]);
    let mut prev = DMatrix::zeros(2, 2);
    for t in 0..50 {
        let (_, c) = ar1_marginal_law(&o, &x0, t);
        let diff = &c - &prev;
        assert!(diff.symmetric_eigenvalues().min() >= -1e-14, "t={t}");
        prev = c;
    }
}

#[test]
fn tv_reference_values() {
    assert_eq!(tv_gaussian_1d(0.3, 2.0, 0.3, 2.0).unwrap(), 0.0);
    assert!(tv_gaussian_1d(0.0, 1.0, 20.0, 1.0).unwrap() >= 0.999_999);
    // Equal variances: TV = 2Φ(|Δm| / 2σ) − 1 = erf(|Δm| / (2√2 σ)).
    let exact = erf(0.1 / (2.0 * std::f64::consts::SQRT_2));
    assert_relative_eq!(exact, 0.039878, max_relative = 1e-4);
    assert_relative_eq!(tv_gaussian_1d(0.0, 1.0, 0.1, 1.0).unwrap(), exact, max_relative = 1e-6);
}

#[test]
fn single_step_average_is_one_step_marginal() {
    let o = reference_oracle();
    let x0 = DVector::from_element(1, 1.0);
    let (m, c) = pr_average_law(&o, &x0, &DMatrix::zeros(1, 1), 0, 1).unwrap();
    let (m1, c1) = ar1_marginal_law(&o, &x0, 1);
    assert_relative_eq!(m[0], m1[0], max_relative = 1e-14);
    assert_relative_eq!(c[(0, 0)], c1[(0, 0)], max_relative = 1e-14);
}

#[test]
fn stationary_average_variance_matches_geometric_covariance_sum() {
    let o = reference_oracle();
    let (a, v): (f64, f64) = (0.9, o.stat_cov[(0, 0)]);
    for n in [1usize, 2, 7, 50, 400] {
        let brute: f64 =
            (0..n).flat_map(|i| (0..n).map(move |j| v * a.powi(i.abs_diff(j) as i32))).sum::<f64>() / (n * n) as f64;
        let (_, c) = pr_average_law(&o, &o.stat_mean, &o.stat_cov, 0, n).unwrap();
        assert_relative_eq!(c[(0, 0)], brute, max_relative = 1e-10);
        assert_relative_eq!(stationary_average_variance_1d(a, v, n), brute, max_relative = 1e-10);
    }
}

#[test]
fn long_averages_concentrate_at_optimum() {
    let o = reference_oracle();
    let (m, c) = pr_average_law(&o, &DVector::from_element(1, 5.0), &DMatrix::zeros(1, 1), 0, 20_000).unwrap();
    let n = 20_000.0;
    assert_relative_eq!(m[0], 5.0 * 0.9 * (1.0 - 0.9f64.powf(n)) / (0.1 * n), max_relative = 1e-9);
    assert!(m[0] < 2.5e-3);
    assert!(c[(0, 0)] < 1e-4);
}

#[test]
fn ensemble_covariance_matches_marginal_law() {
    let spec = ProblemSpec::quadratic(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 1.0])).unwrap();
    let noise = NoiseModel::AdditiveGaussian { cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.6]) };
    let spec = noise.apply_constants(&spec, 1000, RngStream::new(0)).unwrap();
    let o = oracle_for(&spec, &noise, 0.1).unwrap();
    let x0 = DVector::from_vec(vec![1.0, 1.0]);
    let ens = run_ensemble(&spec, &noise, 0.1, ChainVariant::Plain, &InitSampler::Point(x0.clone()), 15, &[15], 100_000, RngStream::new(11), &RunOptions::default())
        .unwrap();
    let s = ens.last_snapshot();
    let mean = DVector::from_fn(2, |j, _| s.column(j).mean());
    let mut cov = DMatrix::zeros(2, 2);
    for r in s.row_iter() {
        let d = r.transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= (s.nrows() - 1) as f64;
    let (_, exact) = ar1_marginal_law(&o, &x0, 15);
    assert!((&cov - &exact).norm() <= 0.05 * exact.norm(), "{cov} vs {exact}");
}

#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use sgdchain::cli::ExperimentConfig;
use sgdchain::model::{NoiseModel, ProblemSpec, DESIGN_CONSTANT_DRAWS};
use sgdchain::RngStream;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs").join(name)
}

pub fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_path(&config_path(name)).expect("example config parses")
}

/// 1-D quadratic, θ* = 0, μ = L = 1, additive N(0, 1) noise.
pub fn reference_problem() -> (ProblemSpec, NoiseModel) {
    let noise = NoiseModel::isotropic_gaussian(1, 1.0);
    let spec = ProblemSpec::scalar_quadratic(0.0, 1.0).unwrap();
    let spec = noise.apply_constants(&spec, DESIGN_CONSTANT_DRAWS, RngStream::new(0)).unwrap();
    (spec, noise)
}

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Symmetric matrix with eigenvalues drawn from [lo, hi], including both ends.
pub fn random_spd(rng: &mut impl Rng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_matrix(rng, d, d).qr().q();
    let eig = DVector::from_fn(d, |i, _| match i {
        0 => lo,
        1 => hi,
        _ => rng.random_range(lo..=hi),
    });
    &q * DMatrix::from_diagonal(&eig) * q.transpose()
}

/// Stationary variance of x ← a x + b ξ, ξ ~ N(0, 1), by fixed-point iteration.
pub fn scalar_fixed_point(a: f64, b: f64) -> f64 {
    let mut v = 0.0;
    for _ in 0..100_000 {
        let next = a * a * v + b * b;
        if (next - v).abs() <= 1e-17 {
            return next;
        }
        v = next;
    }
    v
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_error(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Least-squares slope of ys on xs.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

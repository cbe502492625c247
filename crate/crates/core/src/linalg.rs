//! Small dense linear-algebra helpers on top of nalgebra.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this (relative to the largest magnitude) are treated as
/// rounding noise when taking square roots of PSD matrices.
pub const PSD_CLAMP: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

fn clamp_tolerance(eigs: &DVector<f64>) -> f64 {
    PSD_CLAMP * eigs.amax().max(1.0)
}

/// Checks that `m` is symmetric PSD up to rounding; returns the symmetric
/// eigendecomposition of its symmetrized form.
pub fn psd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if !is_symmetric(m, 1e-9) {
        return Err(Error::arg("matrix", "not symmetric"));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.min();
    if min < -clamp_tolerance(&eig.eigenvalues) {
        return Err(Error::NotPsd(min));
    }
    Ok(eig)
}

/// Principal square root of a PSD matrix, with tiny negative eigenvalues
/// clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

pub fn min_max_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    if is_symmetric(a, 1e-14) {
        return SymmetricEigen::new(symmetrize(a)).eigenvalues.amax();
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Operator 2-norm of a symmetric matrix by power iteration.
pub fn symmetric_op_norm(m: &DMatrix<f64>, max_iter: usize, tol: f64) -> f64 {
    let d = m.nrows();
    if d == 0 {
        return 0.0;
    }
    // Fixed, non-degenerate start so the result is deterministic.
    let mut v = DVector::from_fn(d, |i, _| 1.0 + 0.37 * (i as f64) + 0.013 * ((i * i) as f64));
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..max_iter {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - est).abs() <= tol * norm;
        est = norm;
        v = w / norm;
        if converged {
            break;
        }
    }
    est
}

/// Operator norm used throughout: 100 power iterations at tolerance 1e-10.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    symmetric_op_norm(m, 100, 1e-10)
}

/// Gauss–Hermite rule for the weight `exp(-x²)`: returns (nodes, weights).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// E[g(s·Z)] for Z ~ N(0,1) using an `n`-point Gauss–Hermite rule.
pub fn gaussian_expectation(n: usize, s: f64, g: impl Fn(f64) -> f64) -> f64 {
    static GH64: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let owned;
    let (x, w) = if n == 64 {
        GH64.get_or_init(|| gauss_hermite(64))
    } else {
        owned = gauss_hermite(n);
        &owned
    };
    let scale = std::f64::consts::SQRT_2 * s;
    let total: f64 = x.iter().zip(w).map(|(xi, wi)| wi * g(scale * xi)).sum();
    total / std::f64::consts::PI.sqrt()
}

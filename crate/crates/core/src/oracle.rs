//! Closed-form ground truth for linear gradients with additive Gaussian
//! noise, where θ_t − θ* is an exact vector AR(1) process
//! θ_{t+1} − θ* = A(θ_t − θ*) − βξ_t with A = I − βΣ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{NoiseModel, ProblemSpec};

/// Largest dimension accepted by the vectorized Lyapunov solver.
pub const MAX_LYAPUNOV_DIM: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub ar_matrix: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    pub stat_cov: DMatrix<f64>,
    pub stat_mean: DVector<f64>,
    /// ‖V − AVAᵀ − Q‖_F / ‖V‖_F (0 when V = 0).
    pub relative_residual: f64,
}

impl OracleSolution {
    pub fn dim(&self) -> usize {
        self.stat_mean.len()
    }
}

/// Oracle for `spec` + `noise` at step size `beta`; requires a linear
/// gradient and additive Gaussian noise.
pub fn oracle_for(spec: &ProblemSpec, noise: &NoiseModel, beta: f64) -> Result<OracleSolution> {
    let cov = match noise {
        NoiseModel::AdditiveGaussian { cov } if spec.objective.has_linear_gradient() => cov,
        _ => {
            return Err(Error::Unsupported(
                "closed-form oracle needs a linear gradient and additive Gaussian noise".into(),
            ))
        }
    };
    noise.check_compatible(spec)?;
    let d = spec.dim;
    let a = DMatrix::<f64>::identity(d, d) - &spec.sigma_matrix * beta;
    let q = cov * (beta * beta);
    let v = solve_stationary_cov(&a, &q)?;
    let relative_residual = relative_residual(&a, &q, &v);
    Ok(OracleSolution {
        ar_matrix: a,
        noise_cov: q,
        stat_cov: v,
        stat_mean: spec.theta_star.clone(),
        relative_residual,
    })
}

pub fn lyapunov_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    (v - a * v * a.transpose() - q).norm()
}

fn relative_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let scale = v.norm();
    if scale == 0.0 {
        lyapunov_residual(a, q, v)
    } else {
        lyapunov_residual(a, q, v) / scale
    }
}

/// Unique solution of V = AVAᵀ + Q via (I − A⊗A)vec V = vec Q, with one step
/// of iterative refinement.
pub fn solve_stationary_cov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if !a.is_square() {
        return Err(Error::DimensionMismatch { expected: d, got: a.ncols() });
    }
    if q.nrows() != d || q.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: q.nrows() });
    }
    if d > MAX_LYAPUNOV_DIM {
        return Err(Error::arg("A", "dimension above 50 is not supported"));
    }
    linalg::psd_eigen(q)?;
    let rho = linalg::spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let n = d * d;
    let m = DMatrix::<f64>::identity(n, n) - a.kronecker(a);
    let rhs = DVector::from_column_slice(q.as_slice());
    let lu = m.clone().lu();
    let mut x = lu.solve(&rhs).ok_or(Error::Singular(rho))?;
    let r = &rhs - &m * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(rho));
    }
    Ok(linalg::symmetrize(&DMatrix::from_column_slice(d, d, x.as_slice())))
}

/// W₂ between N(m1, C1) and N(m2, C2) (Bures formula).
pub fn gaussian_w2(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    let d = m1.len();
    for (len, what) in [(m2.len(), d), (c1.nrows(), d), (c2.nrows(), d)] {
        if len != what {
            return Err(Error::DimensionMismatch { expected: what, got: len });
        }
    }
    let r2 = linalg::psd_sqrt(c2)?;
    linalg::psd_eigen(c1)?;
    let cross = linalg::psd_sqrt(&linalg::symmetrize(&(&r2 * c1 * &r2)))?;
    let bures = (c1.trace() + c2.trace() - 2.0 * cross.trace()).max(0.0);
    Ok(((m1 - m2).norm_squared() + bures).sqrt())
}

/// Exact law of θ_t started from θ_0 = `theta0`.
pub fn ar1_marginal_law(oracle: &OracleSolution, theta0: &DVector<f64>, t: usize) -> (DVector<f64>, DMatrix<f64>) {
    let d = oracle.dim();
    marginal_from(oracle, theta0, &DMatrix::zeros(d, d), t)
}

/// Exact law of θ_t started from θ_0 ~ N(mean0, cov0).
pub fn marginal_from(
    oracle: &OracleSolution,
    mean0: &DVector<f64>,
    cov0: &DMatrix<f64>,
    t: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let a = &oracle.ar_matrix;
    let mut offset = mean0 - &oracle.stat_mean;
    let mut cov = cov0.clone();
    for _ in 0..t {
        offset = a * offset;
        cov = a * cov * a.transpose() + &oracle.noise_cov;
    }
    (&oracle.stat_mean + offset, linalg::symmetrize(&cov))
}

fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    let z = x - m;
    (-0.5 * z * z / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// ∫_lo^hi f by adaptive Simpson with absolute tolerance `tol`, after
/// splitting at `breaks`.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > lo && x < hi).collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let pieces = (pts.len() - 1) as f64;
    pts.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
            let whole = simpson(a, b, fa, fm, fb);
            adaptive(&f, a, b, fa, fm, fb, whole, tol / pieces, 40)
        })
        .sum()
}

/// Total variation between N(m1, v1) and N(m2, v2), ½∫|p₁ − p₂|, by adaptive
/// quadrature on [min m − 12√max v, max m + 12√max v].
pub fn tv_gaussian_1d(m1: f64, v1: f64, m2: f64, v2: f64) -> Result<f64> {
    if !(v1 > 0.0) || !(v2 > 0.0) {
        return Err(Error::arg("variance", "must be positive"));
    }
    if m1 == m2 && v1 == v2 {
        return Ok(0.0);
    }
    let s = v1.max(v2).sqrt();
    let lo = m1.min(m2) - 12.0 * s;
    let hi = m1.max(m2) + 12.0 * s;
    // Break points at the scale of each density so narrow peaks are resolved.
    let mut breaks = Vec::new();
    for (m, v) in [(m1, v1), (m2, v2)] {
        let sd = v.sqrt();
        for k in -8..=8 {
            breaks.push(m + f64::from(k) * sd);
        }
    }
    let tv = 0.5 * integrate(|x| (normal_pdf(x, m1, v1) - normal_pdf(x, m2, v2)).abs(), lo, hi, &breaks, 1e-11);
    Ok(tv.clamp(0.0, 1.0))
}

/// Exact Gaussian law of the tail average (1/n)Σ_{t=n0+1}^{n0+n} θ_t for a
/// chain started from N(mean0, cov0).
pub fn pr_average_law(
    oracle: &OracleSolution,
    mean0: &DVector<f64>,
    cov0: &DMatrix<f64>,
    n0: usize,
    n: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if n == 0 {
        return Err(Error::arg("n", "must be at least 1"));
    }
    let d = oracle.dim();
    let a = &oracle.ar_matrix;
    // s[k] = Σ_{m=1}^{k} A^m.
    let mut s = Vec::with_capacity(n);
    s.push(DMatrix::<f64>::zeros(d, d));
    for k in 1..n {
        let next = a * (DMatrix::<f64>::identity(d, d) + &s[k - 1]);
        s.push(next);
    }
    let (mut offset_mean, mut cov_i) = {
        let (m, c) = marginal_from(oracle, mean0, cov0, n0 + 1);
        (m - &oracle.stat_mean, c)
    };
    let mut mean_sum = DVector::zeros(d);
    let mut cov_sum = DMatrix::zeros(d, d);
    for i in 0..n {
        // Cov(θ_j, θ_i) = A^{j−i} cov_i for j ≥ i.
        let tail = &s[n - 1 - i];
        let cross = tail * &cov_i;
        cov_sum += &cov_i + &cross + cross.transpose();
        mean_sum += &offset_mean;
        offset_mean = a * offset_mean;
        cov_i = a * &cov_i * a.transpose() + &oracle.noise_cov;
    }
    let nf = n as f64;
    Ok((&oracle.stat_mean + mean_sum / nf, linalg::symmetrize(&(cov_sum / (nf * nf)))))
}

/// Variance of the average of n consecutive stationary samples of a scalar
/// AR(1) process with coefficient `a` and stationary variance `v`.
pub fn stationary_average_variance_1d(a: f64, v: f64, n: usize) -> f64 {
    let nf = n as f64;
    if a == 0.0 {
        return v / nf;
    }
    v / nf * (1.0 + 2.0 * (a / (1.0 - a)) * (1.0 - (1.0 - a.powi(n as i32)) / (nf * (1.0 - a))))
}

/// sup_x dN(m1, C1)/dN(m2, C2)(x): finite iff C2 − C1 is positive definite.
pub fn density_ratio_sup(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    let (lo1, _) = linalg::min_max_eigenvalues(c1);
    if !(lo1 > 0.0) {
        return Err(Error::arg("nu", "initial law is not absolutely continuous (singular covariance)"));
    }
    let gap = c2 - c1;
    let (lo_gap, _) = linalg::min_max_eigenvalues(&gap);
    if !(lo_gap > 0.0) {
        return Err(Error::arg(
            "nu",
            "density ratio is unbounded: the initial covariance must be strictly below the stationary one",
        ));
    }
    let det_ratio = c2.determinant() / c1.determinant();
    let delta = m1 - m2;
    let chol = gap.cholesky().ok_or(Error::NotPsd(lo_gap))?;
    let quad = delta.dot(&chol.solve(&delta));
    Ok(det_ratio.sqrt() * (0.5 * quad).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, q: f64) -> OracleSolution {
        let am = DMatrix::from_element(1, 1, a);
        let qm = DMatrix::from_element(1, 1, q);
        let v = solve_stationary_cov(&am, &qm).unwrap();
        OracleSolution {
            ar_matrix: am,
            noise_cov: qm,
            stat_cov: v,
            stat_mean: DVector::zeros(1),
            relative_residual: 0.0,
        }
    }

    #[test]
    fn scalar_lyapunov() {
        let o = scalar(0.9, 0.01);
        assert_relative_eq!(o.stat_cov[(0, 0)], 0.01 / 0.19, max_relative = 1e-14);
    }

    #[test]
    fn unstable_rejected() {
        let a = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(solve_stationary_cov(&a, &DMatrix::from_element(1, 1, 1.0)), Err(Error::Unstable(_))));
    }

    #[test]
    fn two_step_marginal() {
        let o = scalar(0.9, 0.01);
        let (m, c) = ar1_marginal_law(&o, &DVector::from_element(1, 1.0), 2);
        assert_relative_eq!(m[0], 0.81, max_relative = 1e-15);
        assert_relative_eq!(c[(0, 0)], 0.0181, max_relative = 1e-14);
    }

    #[test]
    fn tv_extremes() {
        assert_eq!(tv_gaussian_1d(0.0, 1.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(tv_gaussian_1d(0.0, 1.0, 20.0, 1.0).unwrap() >= 0.999_999);
        assert!(tv_gaussian_1d(0.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn density_ratio_1d() {
        let m = DVector::zeros(1);
        let r = density_ratio_sup(&m, &DMatrix::from_element(1, 1, 0.5), &m, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_relative_eq!(r, 2f64.sqrt(), max_relative = 1e-14);
        assert!(density_ratio_sup(&m, &DMatrix::from_element(1, 1, 2.0), &m, &DMatrix::from_element(1, 1, 1.0)).is_err());
    }
}

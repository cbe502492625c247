use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Order of the Gauss–Hermite rule used for the logistic population gradient.
pub const LOGISTIC_QUADRATURE_ORDER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// L(θ) = ½(θ−θ*)ᵀΣ(θ−θ*): the gradient is exactly linear.
    Quadratic,
    /// L(θ) = ½E(Xᵀθ − Y)² with E[XXᵀ] = Σ; same gradient as `Quadratic`.
    LeastSquaresRandomDesign,
    /// Logistic log-loss on a Gaussian design N(0, Σ), restricted to the ball
    /// ‖θ‖ ≤ R.
    LogisticBall,
}

impl ObjectiveKind {
    pub fn has_linear_gradient(self) -> bool {
        matches!(
            self,
            ObjectiveKind::Quadratic | ObjectiveKind::LeastSquaresRandomDesign
        )
    }
}

/// Where a stored constant came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ConstantSource {
    Supplied,
    Exact,
    /// An analytic upper bound rather than the tight value.
    Bound,
    MonteCarlo { draws: usize, stderr: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantProvenance {
    pub name: String,
    #[serde(flatten)]
    pub source: ConstantSource,
}

/// A problem instance: objective, optimum and the regularity constants the
/// step-size conditions and bounds are computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub dim: usize,
    pub objective: ObjectiveKind,
    pub theta_star: DVector<f64>,
    pub sigma_matrix: DMatrix<f64>,
    pub mu: f64,
    pub big_l: f64,
    pub l_sigma: f64,
    pub sigma_sq: f64,
    pub l_w: f64,
    /// Ψ̃₂ constant of the gradient-noise norm.
    pub k_bar: Option<f64>,
    /// Ψ̃₁ constant of the gradient-noise norm.
    pub k_bar_subexp: Option<f64>,
    /// Ψ₂/Ψ₁ constant of 1-Lipschitz functionals of the gradient sample.
    pub k_lip: Option<f64>,
    pub ball_radius: Option<f64>,
    pub provenance: Vec<ConstantProvenance>,
}

impl ProblemSpec {
    /// Quadratic objective with μ and L read off the spectrum of Σ. Noise
    /// constants start at zero; see [`crate::model::NoiseModel::constants`].
    pub fn quadratic(theta_star: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        Self::linear(ObjectiveKind::Quadratic, theta_star, sigma)
    }

    pub fn least_squares(theta_star: DVector<f64>, design_cov: DMatrix<f64>) -> Result<Self> {
        Self::linear(ObjectiveKind::LeastSquaresRandomDesign, theta_star, design_cov)
    }

    fn linear(objective: ObjectiveKind, theta_star: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let dim = theta_star.len();
        check_square(&sigma, dim)?;
        let (lo, hi) = linalg::min_max_eigenvalues(&sigma);
        let spec = ProblemSpec {
            dim,
            objective,
            theta_star,
            sigma_matrix: linalg::symmetrize(&sigma),
            mu: lo,
            big_l: hi,
            l_sigma: 0.0,
            sigma_sq: 0.0,
            l_w: 0.0,
            k_bar: None,
            k_bar_subexp: None,
            k_lip: None,
            ball_radius: None,
            provenance: vec![
                ConstantProvenance { name: "mu".into(), source: ConstantSource::Exact },
                ConstantProvenance { name: "big_l".into(), source: ConstantSource::Exact },
            ],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Scalar quadratic with curvature `mu`: the reference linear-Gaussian case.
    pub fn scalar_quadratic(theta_star: f64, mu: f64) -> Result<Self> {
        Self::quadratic(DVector::from_element(1, theta_star), DMatrix::from_element(1, 1, mu))
    }

    /// Logistic regression on the ball of radius `radius`. For an isotropic
    /// design the curvature constants are computed by quadrature, otherwise
    /// `mu`/`big_l` must be supplied.
    pub fn logistic_ball(
        theta_star: DVector<f64>,
        design_cov: DMatrix<f64>,
        radius: f64,
        curvature: Option<(f64, f64)>,
    ) -> Result<Self> {
        let dim = theta_star.len();
        check_square(&design_cov, dim)?;
        let (mu, big_l, source) = match curvature {
            Some((mu, l)) => (mu, l, ConstantSource::Supplied),
            None => {
                let (mu, l) = logistic_curvature_bounds(&design_cov, radius)?;
                (mu, l, ConstantSource::Bound)
            }
        };
        let spec = ProblemSpec {
            dim,
            objective: ObjectiveKind::LogisticBall,
            theta_star,
            sigma_matrix: linalg::symmetrize(&design_cov),
            mu,
            big_l,
            l_sigma: 0.0,
            sigma_sq: 0.0,
            l_w: 0.0,
            k_bar: None,
            k_bar_subexp: None,
            k_lip: None,
            ball_radius: Some(radius),
            provenance: vec![
                ConstantProvenance { name: "mu".into(), source: source.clone() },
                ConstantProvenance { name: "big_l".into(), source },
            ],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::InvalidSpec("dim must be positive".into()));
        }
        if self.theta_star.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: self.theta_star.len() });
        }
        check_square(&self.sigma_matrix, d)?;
        if !linalg::is_symmetric(&self.sigma_matrix, 1e-12) {
            return Err(Error::InvalidSpec("sigma_matrix must be symmetric".into()));
        }
        let (lo, hi) = linalg::min_max_eigenvalues(&self.sigma_matrix);
        if lo <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "sigma_matrix must be positive definite (smallest eigenvalue {lo:e})"
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidSpec("mu must be positive".into()));
        }
        if !(self.big_l >= self.mu && self.big_l.is_finite()) {
            return Err(Error::InvalidSpec("L must be finite and at least mu".into()));
        }
        for (name, v) in [("l_sigma", self.l_sigma), ("sigma_sq", self.sigma_sq), ("l_w", self.l_w)] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::InvalidSpec(format!("{name} must be nonnegative")));
            }
        }
        for (name, v) in [("k_bar", self.k_bar), ("k_bar_subexp", self.k_bar_subexp), ("k_lip", self.k_lip)] {
            if let Some(v) = v {
                if v.is_nan() || v < 0.0 {
                    return Err(Error::InvalidSpec(format!("{name} must be nonnegative")));
                }
            }
        }
        if self.objective.has_linear_gradient() {
            let tol = 1e-9 * hi.max(1.0);
            if (self.mu - lo).abs() > tol || (self.big_l - hi).abs() > tol {
                return Err(Error::InvalidSpec(format!(
                    "mu and L must equal the extreme eigenvalues of sigma_matrix ({lo}, {hi})"
                )));
            }
        }
        match (self.objective, self.ball_radius) {
            (ObjectiveKind::LogisticBall, None) => {
                return Err(Error::InvalidSpec("LogisticBall requires ball_radius".into()));
            }
            (_, Some(r)) if !(r > 0.0) => {
                return Err(Error::InvalidSpec("ball_radius must be positive".into()));
            }
            (ObjectiveKind::LogisticBall, Some(r)) if self.theta_star.norm() > r * (1.0 + 1e-12) => {
                return Err(Error::InvalidSpec("theta_star must lie inside the ball".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether [`gradient`] is the exact population gradient (as opposed to a
    /// quadrature approximation).
    pub fn gradient_is_exact(&self) -> bool {
        self.objective.has_linear_gradient()
    }

    pub fn check_dim(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: theta.len() });
        }
        Ok(())
    }

    pub fn check_domain(&self, theta: &DVector<f64>) -> Result<()> {
        self.check_dim(theta)?;
        if self.objective == ObjectiveKind::LogisticBall {
            let r = self.ball_radius.unwrap_or(f64::INFINITY);
            let norm = theta.norm();
            if norm > r * (1.0 + 1e-12) {
                return Err(Error::OutsideDomain { norm, radius: r });
            }
        }
        Ok(())
    }

    pub fn set_provenance(&mut self, name: &str, source: ConstantSource) {
        self.provenance.retain(|p| p.name != name);
        self.provenance.push(ConstantProvenance { name: name.to_string(), source });
    }

    pub fn provenance_of(&self, name: &str) -> Option<&ConstantSource> {
        self.provenance.iter().find(|p| p.name == name).map(|p| &p.source)
    }
}

fn check_square(m: &DMatrix<f64>, d: usize) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::InvalidSpec(format!(
            "sigma_matrix must be {d}x{d}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// E[σ'(s·Z)] for Z ~ N(0,1).
fn mean_sigmoid_slope(s: f64) -> f64 {
    if s == 0.0 {
        return 0.25;
    }
    linalg::gaussian_expectation(LOGISTIC_QUADRATURE_ORDER, s, sigmoid_prime)
}

/// Exact gradient of the objective at `theta` (quadrature for LogisticBall).
pub fn gradient(spec: &ProblemSpec, theta: &DVector<f64>) -> Result<DVector<f64>> {
    spec.check_domain(theta)?;
    Ok(gradient_unchecked(spec, theta))
}

pub(crate) fn gradient_unchecked(spec: &ProblemSpec, theta: &DVector<f64>) -> DVector<f64> {
    match spec.objective {
        ObjectiveKind::Quadratic | ObjectiveKind::LeastSquaresRandomDesign => {
            &spec.sigma_matrix * (theta - &spec.theta_star)
        }
        ObjectiveKind::LogisticBall => {
            // Stein's identity on the Gaussian design reduces the population
            // gradient to two one-dimensional expectations:
            // ∇L(θ) = Σ(θ·E σ'(Xᵀθ) − θ*·E σ'(Xᵀθ*)).
            let sig = &spec.sigma_matrix;
            let s_theta = theta.dot(&(sig * theta)).max(0.0).sqrt();
            let s_star = spec.theta_star.dot(&(sig * &spec.theta_star)).max(0.0).sqrt();
            let combo = theta * mean_sigmoid_slope(s_theta) - &spec.theta_star * mean_sigmoid_slope(s_star);
            sig * combo
        }
    }
}

/// Hessian of the logistic objective for a Gaussian design, by quadrature:
/// E[XXᵀσ'(Xᵀθ)] = Σ·E σ'(w) + (Σθ)(Σθ)ᵀ·E σ'''(w), w ~ N(0, θᵀΣθ).
pub fn logistic_hessian(design_cov: &DMatrix<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
    let s = theta.dot(&(design_cov * theta)).max(0.0).sqrt();
    let h0 = mean_sigmoid_slope(s);
    let h2 = linalg::gaussian_expectation(LOGISTIC_QUADRATURE_ORDER, s, |x| {
        let p = sigmoid(x);
        let sp = p * (1.0 - p);
        sp * (1.0 - 6.0 * sp)
    });
    let st = design_cov * theta;
    design_cov * h0 + &st * st.transpose() * h2
}

/// Strong-convexity and smoothness constants of the logistic objective on the
/// ball, for an isotropic design Σ = s²I. The Hessian then depends on ‖θ‖
/// only, so a fine radial scan is exhaustive.
pub fn logistic_curvature_bounds(design_cov: &DMatrix<f64>, radius: f64) -> Result<(f64, f64)> {
    let d = design_cov.nrows();
    let s2 = design_cov[(0, 0)];
    let iso = DMatrix::<f64>::identity(d, d) * s2;
    if (design_cov - iso).amax() > 1e-12 * s2.abs().max(1.0) {
        return Err(Error::Unsupported(
            "curvature constants are only computed for isotropic designs; supply mu and L".into(),
        ));
    }
    if !(radius > 0.0) {
        return Err(Error::arg("radius", "must be positive"));
    }
    let mut mu = f64::INFINITY;
    let mut big_l: f64 = 0.0;
    let steps = 400;
    for i in 0..=steps {
        let r = radius * i as f64 / steps as f64;
        let mut theta = DVector::zeros(d);
        theta[0] = r;
        let (lo, hi) = linalg::min_max_eigenvalues(&logistic_hessian(design_cov, &theta));
        mu = mu.min(lo);
        big_l = big_l.max(hi);
    }
    Ok((mu, big_l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_gradient_examples() {
        let spec = ProblemSpec::quadratic(
            DVector::from_vec(vec![0.5, -1.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0])),
        )
        .unwrap();
        assert_eq!(spec.mu, 1.0);
        assert_eq!(spec.big_l, 3.0);
        let g = gradient(&spec, &spec.theta_star.clone()).unwrap();
        assert_eq!(g, DVector::zeros(2));
        let theta = &spec.theta_star + DVector::from_vec(vec![1.0, 1.0]);
        let g = gradient(&spec, &theta).unwrap();
        assert_relative_eq!(g[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(g[1], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let spec = ProblemSpec::scalar_quadratic(0.0, 1.0).unwrap();
        let err = gradient(&spec, &DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, got: 2 }));
    }

    #[test]
    fn inconsistent_constants_rejected() {
        let mut spec = ProblemSpec::scalar_quadratic(0.0, 2.0).unwrap();
        spec.mu = 1.0;
        assert!(spec.validate().is_err());
        let mut spec = ProblemSpec::scalar_quadratic(0.0, 2.0).unwrap();
        spec.l_sigma = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn logistic_domain_checked() {
        let spec = ProblemSpec::logistic_ball(
            DVector::from_element(1, 0.5),
            DMatrix::identity(1, 1),
            1.0,
            None,
        )
        .unwrap();
        assert!(matches!(
            gradient(&spec, &DVector::from_element(1, 2.0)),
            Err(Error::OutsideDomain { .. })
        ));
        let g = gradient(&spec, &spec.theta_star.clone()).unwrap();
        assert!(g.norm() < 1e-14);
        assert!(!spec.gradient_is_exact());
        assert!(spec.mu > 0.0 && spec.big_l <= 0.25 + 1e-12);
    }
}

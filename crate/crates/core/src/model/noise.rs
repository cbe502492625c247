use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use super::spec::{gradient, gradient_unchecked, sigmoid, ConstantSource, ObjectiveKind, ProblemSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::RngStream;

/// Monte Carlo draws used to estimate E‖XXᵀ − Σ‖₂² for random designs.
pub const DESIGN_CONSTANT_DRAWS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    AdditiveGaussian,
    AdditiveStudentT,
    RandomDesignGaussian,
    RandomDesignBounded,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::AdditiveGaussian => "additive_gaussian",
            NoiseKind::AdditiveStudentT => "additive_student_t",
            NoiseKind::RandomDesignGaussian => "random_design_gaussian",
            NoiseKind::RandomDesignBounded => "random_design_bounded",
        }
    }
}

/// Gradient-noise models.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// ε(θ) = ξ with ξ ~ N(0, cov), independent of θ.
    AdditiveGaussian { cov: DMatrix<f64> },
    /// ε(θ) = scale·(t₁, …, t_d) with i.i.d. Student-t coordinates.
    AdditiveStudentT { dof: f64, scale: f64 },
    /// Samples (X, Y) with X ~ N(0, Σ). For linear objectives
    /// Y = Xᵀθ* + ξ, ξ ~ N(0, label_std²); for the logistic objective Y is a
    /// Bernoulli label and `label_std` is unused.
    RandomDesignGaussian { label_std: f64 },
    /// X with i.i.d. Uniform[−bound, bound] coordinates (so Σ must equal
    /// bound²/3·I) and uniform label noise of standard deviation `label_std`.
    RandomDesignBounded { bound: f64, label_std: f64 },
}

/// One noise realization ζ. Both chains of a synchronous coupling apply the
/// same `Zeta` at their own θ.
#[derive(Debug, Clone, PartialEq)]
pub enum Zeta {
    Additive(DVector<f64>),
    /// Design vector and a scalar label variable (label noise for linear
    /// objectives, a Uniform(0,1) variate for logistic labels).
    Design { x: DVector<f64>, label: f64 },
}

/// Regularity constants implied by a noise model for a given spec.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConstants {
    pub l_sigma: f64,
    pub sigma_sq: f64,
    pub l_w: f64,
    pub source: ConstantSource,
    /// Exact λ_max(E[(XXᵀ−Σ)²]) for Gaussian designs, for cross-checking.
    pub design_second_moment: Option<f64>,
}

impl NoiseModel {
    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseModel::AdditiveGaussian { .. } => NoiseKind::AdditiveGaussian,
            NoiseModel::AdditiveStudentT { .. } => NoiseKind::AdditiveStudentT,
            NoiseModel::RandomDesignGaussian { .. } => NoiseKind::RandomDesignGaussian,
            NoiseModel::RandomDesignBounded { .. } => NoiseKind::RandomDesignBounded,
        }
    }

    pub fn isotropic_gaussian(dim: usize, variance: f64) -> Self {
        NoiseModel::AdditiveGaussian { cov: DMatrix::identity(dim, dim) * variance }
    }

    pub fn is_additive(&self) -> bool {
        matches!(self, NoiseModel::AdditiveGaussian { .. } | NoiseModel::AdditiveStudentT { .. })
    }

    /// The noise law has finite moments of every order and a usable
    /// exponential moment; Student-t noise does not.
    pub fn is_light_tailed(&self) -> bool {
        !matches!(self, NoiseModel::AdditiveStudentT { .. })
    }

    pub fn check_compatible(&self, spec: &ProblemSpec) -> Result<()> {
        let d = spec.dim;
        match self {
            NoiseModel::AdditiveGaussian { cov } => {
                if cov.nrows() != d || cov.ncols() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: cov.nrows() });
                }
                linalg::psd_eigen(cov)?;
            }
            NoiseModel::AdditiveStudentT { dof, scale } => {
                if !(*dof > 0.0) || !(*scale >= 0.0) {
                    return Err(Error::InvalidSpec("student-t needs dof > 0 and scale >= 0".into()));
                }
            }
            NoiseModel::RandomDesignGaussian { label_std } => {
                if !(*label_std >= 0.0) {
                    return Err(Error::InvalidSpec("label_std must be nonnegative".into()));
                }
            }
            NoiseModel::RandomDesignBounded { bound, label_std } => {
                if !(*bound > 0.0) || !(*label_std >= 0.0) {
                    return Err(Error::InvalidSpec("bounded design needs bound > 0, label_std >= 0".into()));
                }
                if spec.objective == ObjectiveKind::LogisticBall {
                    return Err(Error::Unsupported(
                        "the logistic population gradient assumes a Gaussian design".into(),
                    ));
                }
                let target = DMatrix::<f64>::identity(d, d) * (bound * bound / 3.0);
                if (&spec.sigma_matrix - target).amax() > 1e-9 * (bound * bound).max(1.0) {
                    return Err(Error::InvalidSpec(
                        "bounded design requires sigma_matrix = bound^2/3 * I".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Noise constants (L_σ, σ², L_W) for this model on `spec`. Random linear
    /// designs use a Monte Carlo estimate of E‖XXᵀ − Σ‖₂² drawn from `stream`.
    pub fn constants(&self, spec: &ProblemSpec, draws: usize, stream: RngStream) -> Result<NoiseConstants> {
        self.check_compatible(spec)?;
        let d = spec.dim as f64;
        let sig = &spec.sigma_matrix;
        Ok(match self {
            NoiseModel::AdditiveGaussian { cov } => NoiseConstants {
                l_sigma: 0.0,
                sigma_sq: cov.trace(),
                l_w: 0.0,
                source: ConstantSource::Exact,
                design_second_moment: None,
            },
            NoiseModel::AdditiveStudentT { dof, scale } => NoiseConstants {
                l_sigma: 0.0,
                sigma_sq: if *dof > 2.0 { d * scale * scale * dof / (dof - 2.0) } else { f64::INFINITY },
                l_w: 0.0,
                source: ConstantSource::Exact,
                design_second_moment: None,
            },
            _ if spec.objective == ObjectiveKind::LogisticBall => {
                // |σ(·) − Y| ≤ 1 and σ is ¼-Lipschitz; for X ~ N(0,Σ),
                // E[‖X‖²XXᵀ] = tr(Σ)Σ + 2Σ².
                let fourth = sig * sig.trace() + sig * sig * 2.0;
                NoiseConstants {
                    l_sigma: 0.0,
                    sigma_sq: sig.trace(),
                    l_w: linalg::min_max_eigenvalues(&fourth).1 / 16.0,
                    source: ConstantSource::Bound,
                    design_second_moment: None,
                }
            }
            NoiseModel::RandomDesignGaussian { label_std } | NoiseModel::RandomDesignBounded { label_std, .. } => {
                if draws < 2 {
                    return Err(Error::TooFewSamples { needed: 2, got: draws });
                }
                let sampler = GradientSampler::new(spec, self)?;
                let mut rng = stream.rng();
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for _ in 0..draws {
                    let x = sampler.draw_design(&mut rng);
                    let m = &x * x.transpose() - sig;
                    let norm = SymmetricEigen::new(m).eigenvalues.amax();
                    let v = norm * norm;
                    sum += v;
                    sum_sq += v * v;
                }
                let n = draws as f64;
                let mean = sum / n;
                let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
                let exact = matches!(self, NoiseModel::RandomDesignGaussian { .. })
                    .then(|| linalg::min_max_eigenvalues(&(sig * sig.trace() + sig * sig)).1);
                NoiseConstants {
                    l_sigma: mean,
                    sigma_sq: label_std * label_std * sig.trace(),
                    l_w: mean,
                    source: ConstantSource::MonteCarlo { draws, stderr: (var / n).sqrt() },
                    design_second_moment: exact,
                }
            }
        })
    }

    /// Returns a copy of `spec` with the noise constants filled in.
    pub fn apply_constants(&self, spec: &ProblemSpec, draws: usize, stream: RngStream) -> Result<ProblemSpec> {
        let c = self.constants(spec, draws, stream)?;
        let mut out = spec.clone();
        out.l_sigma = c.l_sigma;
        out.sigma_sq = c.sigma_sq;
        out.l_w = c.l_w;
        for name in ["l_sigma", "l_w"] {
            out.set_provenance(name, c.source.clone());
        }
        let sigma_source = if matches!(c.source, ConstantSource::MonteCarlo { .. }) {
            ConstantSource::Exact
        } else {
            c.source.clone()
        };
        out.set_provenance("sigma_sq", sigma_source);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
enum Prepared {
    Additive { factor: Option<DMatrix<f64>> },
    StudentT { dist: StudentT<f64>, scale: f64 },
    GaussianDesign { factor: DMatrix<f64>, label_std: f64 },
    BoundedDesign { bound: f64, label_half_width: f64 },
}

/// A noise model bound to a problem, with matrix factors precomputed so that
/// draws are cheap. Holds no mutable state; all randomness comes from the
/// generator passed to each call.
#[derive(Debug, Clone)]
pub struct GradientSampler<'a> {
    spec: &'a ProblemSpec,
    prepared: Prepared,
}

impl<'a> GradientSampler<'a> {
    pub fn new(spec: &'a ProblemSpec, noise: &NoiseModel) -> Result<Self> {
        noise.check_compatible(spec)?;
        let prepared = match noise {
            NoiseModel::AdditiveGaussian { cov } => Prepared::Additive {
                factor: if cov.amax() == 0.0 { None } else { Some(linalg::psd_sqrt(cov)?) },
            },
            NoiseModel::AdditiveStudentT { dof, scale } => Prepared::StudentT {
                dist: StudentT::new(*dof).map_err(|e| Error::InvalidSpec(format!("student-t: {e}")))?,
                scale: *scale,
            },
            NoiseModel::RandomDesignGaussian { label_std } => Prepared::GaussianDesign {
                factor: linalg::psd_sqrt(&spec.sigma_matrix)?,
                label_std: *label_std,
            },
            NoiseModel::RandomDesignBounded { bound, label_std } => Prepared::BoundedDesign {
                bound: *bound,
                label_half_width: 3f64.sqrt() * label_std,
            },
        };
        Ok(GradientSampler { spec, prepared })
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    fn draw_design<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.spec.dim;
        match &self.prepared {
            Prepared::GaussianDesign { factor, .. } => {
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                factor * z
            }
            Prepared::BoundedDesign { bound, .. } => DVector::from_fn(d, |_, _| rng.random_range(-*bound..=*bound)),
            _ => DVector::zeros(d),
        }
    }

    /// A zeroed realization of the right shape, for use with
    /// [`draw_zeta_into`](Self::draw_zeta_into).
    pub fn empty_zeta(&self) -> Zeta {
        let d = self.spec.dim;
        match &self.prepared {
            Prepared::Additive { .. } | Prepared::StudentT { .. } => Zeta::Additive(DVector::zeros(d)),
            _ => Zeta::Design { x: DVector::zeros(d), label: 0.0 },
        }
    }

    /// Draws one noise realization ζ.
    pub fn draw_zeta<R: Rng + ?Sized>(&self, rng: &mut R) -> Zeta {
        let mut zeta = self.empty_zeta();
        let mut scratch = DVector::zeros(self.spec.dim);
        self.draw_zeta_into(rng, &mut zeta, &mut scratch);
        zeta
    }

    /// Draws ζ into a buffer from [`empty_zeta`](Self::empty_zeta). `scratch`
    /// must have length d.
    pub fn draw_zeta_into<R: Rng + ?Sized>(&self, rng: &mut R, zeta: &mut Zeta, scratch: &mut DVector<f64>) {
        match (&self.prepared, zeta) {
            (Prepared::Additive { factor }, Zeta::Additive(xi)) => match factor {
                None => xi.fill(0.0),
                Some(f) => {
                    for z in scratch.iter_mut() {
                        *z = rng.sample(StandardNormal);
                    }
                    xi.gemv(1.0, f, scratch, 0.0);
                }
            },
            (Prepared::StudentT { dist, scale }, Zeta::Additive(xi)) => {
                for v in xi.iter_mut() {
                    *v = scale * dist.sample(rng);
                }
            }
            (Prepared::GaussianDesign { factor, label_std }, Zeta::Design { x, label }) => {
                for z in scratch.iter_mut() {
                    *z = rng.sample(StandardNormal);
                }
                x.gemv(1.0, factor, scratch, 0.0);
                *label = if self.spec.objective == ObjectiveKind::LogisticBall {
                    rng.random::<f64>()
                } else {
                    label_std * rng.sample::<f64, _>(StandardNormal)
                };
            }
            (Prepared::BoundedDesign { bound, label_half_width }, Zeta::Design { x, label }) => {
                for v in x.iter_mut() {
                    *v = rng.random_range(-*bound..=*bound);
                }
                *label = if *label_half_width > 0.0 {
                    rng.random_range(-*label_half_width..=*label_half_width)
                } else {
                    0.0
                };
            }
            _ => unreachable!("zeta buffer does not match the noise model"),
        }
    }

    /// G(θ, ζ) for a given realization. `theta` must already be checked.
    pub fn gradient_from_zeta(&self, theta: &DVector<f64>, zeta: &Zeta) -> DVector<f64> {
        let mut out = DVector::zeros(self.spec.dim);
        let mut scratch = DVector::zeros(self.spec.dim);
        self.gradient_into(theta, zeta, &mut out, &mut scratch);
        out
    }

    /// Writes G(θ, ζ) into `out`; `scratch` must have length d.
    pub fn gradient_into(&self, theta: &DVector<f64>, zeta: &Zeta, out: &mut DVector<f64>, scratch: &mut DVector<f64>) {
        let spec = self.spec;
        match zeta {
            Zeta::Additive(xi) => {
                if spec.objective.has_linear_gradient() {
                    scratch.copy_from(theta);
                    *scratch -= &spec.theta_star;
                    out.gemv(1.0, &spec.sigma_matrix, scratch, 0.0);
                } else {
                    out.copy_from(&gradient_unchecked(spec, theta));
                }
                *out += xi;
            }
            Zeta::Design { x, label } => {
                let r = match spec.objective {
                    ObjectiveKind::LogisticBall => {
                        let y = if *label < sigmoid(x.dot(&spec.theta_star)) { 1.0 } else { 0.0 };
                        sigmoid(x.dot(theta)) - y
                    }
                    // Y = Xᵀθ* + ξ, so G = X(Xᵀθ − Y) = X(Xᵀ(θ − θ*) − ξ).
                    _ => x.dot(theta) - x.dot(&spec.theta_star) - label,
                };
                out.copy_from(x);
                *out *= r;
            }
        }
    }

    /// One draw of G(θ, ζ).
    pub fn sample<R: Rng + ?Sized>(&self, theta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let zeta = self.draw_zeta(rng);
        self.gradient_from_zeta(theta, &zeta)
    }

    /// One draw of ε(θ) = G(θ, ζ) − ∇L(θ).
    pub fn sample_noise<R: Rng + ?Sized>(&self, theta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        self.sample(theta, rng) - gradient_unchecked(self.spec, theta)
    }
}

/// One unbiased draw G(θ, ζ) using a fresh generator for `stream`. Repeated
/// calls with the same stream return the same draw.
pub fn sample_gradient(
    spec: &ProblemSpec,
    noise: &NoiseModel,
    theta: &DVector<f64>,
    stream: RngStream,
) -> Result<DVector<f64>> {
    spec.check_domain(theta)?;
    let sampler = GradientSampler::new(spec, noise)?;
    let mut rng = stream.rng();
    Ok(sampler.sample(theta, &mut rng))
}

/// Convenience for tests and bindings: ∇L plus `n` draws of G at θ, drawn
/// sequentially from one stream.
pub fn sample_gradients(
    spec: &ProblemSpec,
    noise: &NoiseModel,
    theta: &DVector<f64>,
    n: usize,
    stream: RngStream,
) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    let g = gradient(spec, theta)?;
    let sampler = GradientSampler::new(spec, noise)?;
    let mut rng = stream.rng();
    Ok((g, (0..n).map(|_| sampler.sample(theta, &mut rng)).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_is_exact_gradient() {
        let spec = ProblemSpec::scalar_quadratic(1.0, 2.0).unwrap();
        let noise = NoiseModel::isotropic_gaussian(1, 0.0);
        let theta = DVector::from_element(1, 3.0);
        let g = sample_gradient(&spec, &noise, &theta, RngStream::new(1)).unwrap();
        assert_eq!(g, gradient(&spec, &theta).unwrap());
    }

    #[test]
    fn same_stream_same_draw() {
        let spec = ProblemSpec::scalar_quadratic(0.0, 1.0).unwrap();
        let noise = NoiseModel::isotropic_gaussian(1, 1.0);
        let theta = DVector::from_element(1, 0.5);
        let a = sample_gradient(&spec, &noise, &theta, RngStream::new(5)).unwrap();
        let b = sample_gradient(&spec, &noise, &theta, RngStream::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bounded_design_requires_matching_sigma() {
        let spec = ProblemSpec::least_squares(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let bad = NoiseModel::RandomDesignBounded { bound: 1.0, label_std: 0.1 };
        assert!(bad.check_compatible(&spec).is_err());
        let good = NoiseModel::RandomDesignBounded { bound: 3f64.sqrt(), label_std: 0.1 };
        assert!(good.check_compatible(&spec).is_ok());
    }

    #[test]
    fn student_t_variance() {
        let spec = ProblemSpec::scalar_quadratic(0.0, 1.0).unwrap();
        let noise = NoiseModel::AdditiveStudentT { dof: 5.0, scale: 1.0 };
        let c = noise.constants(&spec, 10, RngStream::new(0)).unwrap();
        assert!((c.sigma_sq - 5.0 / 3.0).abs() < 1e-15);
    }
}

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    step_size, validate_step_size, GradientSampler, NoiseModel, ObjectiveKind, ProblemSpec, Zeta,
};
use crate::rng::RngStream;

/// Runs abort once ‖θ_t − θ*‖ exceeds this.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Full trajectories are stored only up to this many scalar entries; longer
/// runs are strided.
pub const MAX_STORED_ENTRIES: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ChainVariant {
    /// θ_{t+1} = θ_t − βG(θ_t, ζ_t).
    Plain,
    /// Plain step followed by Euclidean projection onto the ball ‖θ‖ ≤ R.
    Projected,
    /// Average of `batch` fresh gradient draws per step.
    Minibatch { batch: usize },
    /// Same law as `Minibatch`, but the batch average is drawn in one shot
    /// (Wishart for Gaussian designs, scaled Gaussian for additive noise).
    MinibatchAggregated { batch: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Run even if β violates the ergodicity condition.
    pub force_step_size: bool,
    /// Keep every gradient draw in the trajectory (stride 1 only).
    pub record_draws: bool,
}

impl RunOptions {
    pub fn forced() -> Self {
        RunOptions { force_step_size: true, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
enum Aggregate {
    None,
    /// Additive Gaussian: batch mean of ξ has factor C^{1/2}/√N.
    Additive { factor: DMatrix<f64> },
    /// Gaussian design: [X; ξ] has covariance factor `factor` ((d+1)×(d+1)).
    Wishart { factor: DMatrix<f64> },
}

/// One SGD transition kernel, bound to a spec, noise model and step size.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    sampler: GradientSampler<'a>,
    beta: f64,
    variant: ChainVariant,
    radius: f64,
    aggregate: Aggregate,
}

/// Reusable per-chain work buffers.
#[derive(Debug, Clone)]
pub struct StepBuffers {
    zeta: Zeta,
    scratch: DVector<f64>,
    single: DVector<f64>,
    grads: Vec<DVector<f64>>,
    bartlett: DMatrix<f64>,
    wishart: DMatrix<f64>,
}

impl StepBuffers {
    /// The (averaged) gradient draw applied to chain `k` in the last step.
    pub fn last_gradient(&self, k: usize) -> &DVector<f64> {
        &self.grads[k]
    }
}

impl<'a> Stepper<'a> {
    pub fn new(
        spec: &'a ProblemSpec,
        noise: &NoiseModel,
        beta: f64,
        variant: ChainVariant,
        options: &RunOptions,
    ) -> Result<Self> {
        spec.validate()?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::arg("beta", "must be finite and nonnegative"));
        }
        if !options.force_step_size {
            let report = match variant {
                ChainVariant::Minibatch { batch } | ChainVariant::MinibatchAggregated { batch } if batch > 0 => {
                    validate_step_size(&batch_averaged(spec, batch), beta, None)
                }
                _ => validate_step_size(spec, beta, None),
            };
            let entry = report.get(step_size::ERGODICITY).expect("ergodicity entry");
            if !entry.admissible {
                return Err(Error::InadmissibleStepSize {
                    beta,
                    condition: format!("{} (beta < {})", entry.condition_id, entry.formula),
                    threshold: entry.threshold,
                });
            }
        }
        let radius = match variant {
            ChainVariant::Projected => spec
                .ball_radius
                .ok_or_else(|| Error::InvalidSpec("projected chain requires ball_radius".into()))?,
            _ => {
                if spec.objective == ObjectiveKind::LogisticBall {
                    return Err(Error::Unsupported(
                        "the logistic objective is defined on a ball; use the projected chain".into(),
                    ));
                }
                f64::INFINITY
            }
        };
        let aggregate = match variant {
            ChainVariant::Minibatch { batch } | ChainVariant::MinibatchAggregated { batch } if batch == 0 => {
                return Err(Error::arg("batch", "must be at least 1"));
            }
            ChainVariant::MinibatchAggregated { batch } => aggregate_for(spec, noise, batch)?,
            _ => Aggregate::None,
        };
        Ok(Stepper { sampler: GradientSampler::new(spec, noise)?, beta, variant, radius, aggregate })
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.sampler.spec()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn variant(&self) -> ChainVariant {
        self.variant
    }

    pub fn buffers(&self, chains: usize) -> StepBuffers {
        let d = self.spec().dim;
        let m = d + 1;
        StepBuffers {
            zeta: self.sampler.empty_zeta(),
            scratch: DVector::zeros(d),
            single: DVector::zeros(d),
            grads: vec![DVector::zeros(d); chains.max(1)],
            bartlett: DMatrix::zeros(m, m),
            wishart: DMatrix::zeros(m, m),
        }
    }

    /// Advances every chain in `thetas` by one step on a shared noise
    /// realization. With a single chain this is the ordinary iteration.
    pub fn step_many<R: Rng + ?Sized>(&self, thetas: &mut [DVector<f64>], rng: &mut R, buf: &mut StepBuffers) {
        let k = thetas.len();
        if buf.grads.len() < k {
            buf.grads.resize(k, DVector::zeros(self.spec().dim));
        }
        match self.variant {
            ChainVariant::Plain | ChainVariant::Projected => {
                self.sampler.draw_zeta_into(rng, &mut buf.zeta, &mut buf.scratch);
                for (theta, g) in thetas.iter().zip(buf.grads.iter_mut()) {
                    self.sampler.gradient_into(theta, &buf.zeta, g, &mut buf.scratch);
                }
            }
            ChainVariant::Minibatch { batch } => {
                for g in buf.grads.iter_mut().take(k) {
                    g.fill(0.0);
                }
                for _ in 0..batch {
                    self.sampler.draw_zeta_into(rng, &mut buf.zeta, &mut buf.scratch);
                    for (theta, g) in thetas.iter().zip(buf.grads.iter_mut()) {
                        self.sampler.gradient_into(theta, &buf.zeta, &mut buf.single, &mut buf.scratch);
                        *g += &buf.single;
                    }
                }
                let n = batch as f64;
                for g in buf.grads.iter_mut().take(k) {
                    *g /= n;
                }
            }
            ChainVariant::MinibatchAggregated { batch } => self.aggregated_gradients(thetas, batch, rng, buf),
        }
        for (theta, g) in thetas.iter_mut().zip(&buf.grads) {
            theta.axpy(-self.beta, g, 1.0);
            if self.variant == ChainVariant::Projected {
                project_onto_ball(theta, self.radius);
            }
        }
    }

    fn aggregated_gradients<R: Rng + ?Sized>(
        &self,
        thetas: &[DVector<f64>],
        batch: usize,
        rng: &mut R,
        buf: &mut StepBuffers,
    ) {
        let spec = self.spec();
        let d = spec.dim;
        let n = batch as f64;
        match &self.aggregate {
            Aggregate::Additive { factor } => {
                for z in buf.scratch.iter_mut() {
                    *z = rng.sample(StandardNormal);
                }
                buf.single.gemv(1.0 / n.sqrt(), factor, &buf.scratch, 0.0);
                for (theta, g) in thetas.iter().zip(buf.grads.iter_mut()) {
                    let diff = theta - &spec.theta_star;
                    g.gemv(1.0, &spec.sigma_matrix, &diff, 0.0);
                    *g += &buf.single;
                }
            }
            Aggregate::Wishart { factor } => {
                // Bartlett decomposition: A lower triangular with A_ii² ~ χ²(N − i)
                // and standard normal entries below the diagonal gives
                // AAᵀ ~ Wishart(N, I).
                let m = d + 1;
                let a = &mut buf.bartlett;
                a.fill(0.0);
                for i in 0..m {
                    let chi = ChiSquared::new((batch - i) as f64).expect("positive degrees of freedom");
                    a[(i, i)] = chi.sample(rng).sqrt();
                    for j in 0..i {
                        a[(i, j)] = rng.sample(StandardNormal);
                    }
                }
                let la = factor * &*a;
                buf.wishart = &la * la.transpose();
                let w = &buf.wishart;
                for (theta, g) in thetas.iter().zip(buf.grads.iter_mut()) {
                    let diff = theta - &spec.theta_star;
                    for r in 0..d {
                        let mut acc = -w[(r, d)];
                        for c in 0..d {
                            acc += w[(r, c)] * diff[c];
                        }
                        g[r] = acc / n;
                    }
                }
            }
            Aggregate::None => unreachable!("aggregated variant without an aggregate sampler"),
        }
    }

    /// Fails if θ left the divergence radius or is not finite.
    pub fn guard(&self, step: usize, theta: &DVector<f64>) -> Result<()> {
        let spec = self.spec();
        let mut sq = 0.0;
        for (a, b) in theta.iter().zip(spec.theta_star.iter()) {
            sq += (a - b) * (a - b);
        }
        let distance = sq.sqrt();
        if !distance.is_finite() || distance > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence { step, distance });
        }
        Ok(())
    }

    /// Checks an initial point against the chain's domain.
    pub fn check_start(&self, theta0: &DVector<f64>) -> Result<()> {
        self.spec().check_dim(theta0)?;
        if self.variant == ChainVariant::Projected {
            let norm = theta0.norm();
            if norm > self.radius {
                return Err(Error::OutsideDomain { norm, radius: self.radius });
            }
        }
        self.guard(0, theta0)
    }

    /// A running chain started at `theta0`, drawing noise from `stream`.
    pub fn chain(&self, theta0: DVector<f64>, stream: RngStream) -> Result<Chain<'_, 'a>> {
        self.check_start(&theta0)?;
        Ok(Chain { stepper: self, theta: vec![theta0], t: 0, rng: stream.rng(), buf: self.buffers(1) })
    }
}

/// Noise constants of the mean of `batch` independent gradient draws.
pub fn batch_averaged(spec: &ProblemSpec, batch: usize) -> ProblemSpec {
    let n = batch as f64;
    let mut s = spec.clone();
    s.l_sigma /= n;
    s.sigma_sq /= n;
    s.l_w /= n;
    s
}

fn aggregate_for(spec: &ProblemSpec, noise: &NoiseModel, batch: usize) -> Result<Aggregate> {
    let d = spec.dim;
    match noise {
        NoiseModel::AdditiveGaussian { cov } if spec.objective.has_linear_gradient() => {
            Ok(Aggregate::Additive { factor: linalg::psd_sqrt(cov)? })
        }
        NoiseModel::RandomDesignGaussian { label_std } if spec.objective.has_linear_gradient() => {
            if batch <= d {
                return Err(Error::arg("batch", "aggregated sampling needs batch > dim"));
            }
            let root = linalg::psd_sqrt(&spec.sigma_matrix)?;
            let mut factor = DMatrix::zeros(d + 1, d + 1);
            factor.view_mut((0, 0), (d, d)).copy_from(&root);
            factor[(d, d)] = *label_std;
            Ok(Aggregate::Wishart { factor })
        }
        _ => Err(Error::Unsupported(format!(
            "aggregated minibatch sampling is not available for {} noise on this objective",
            noise.kind().name()
        ))),
    }
}

/// Radial projection onto the closed ball of radius `radius`; the result is
/// guaranteed to satisfy ‖θ‖ ≤ radius in floating point.
pub fn project_onto_ball(theta: &mut DVector<f64>, radius: f64) {
    let norm = theta.norm();
    if norm > radius {
        *theta *= radius / norm;
        while theta.norm() > radius {
            *theta *= 1.0 - f64::EPSILON;
        }
    }
}

/// A single chain in progress.
pub struct Chain<'s, 'a> {
    stepper: &'s Stepper<'a>,
    theta: Vec<DVector<f64>>,
    t: usize,
    rng: ChaCha8Rng,
    buf: StepBuffers,
}

impl Chain<'_, '_> {
    pub fn theta(&self) -> &DVector<f64> {
        &self.theta[0]
    }

    pub fn time(&self) -> usize {
        self.t
    }

    /// Advances one step and returns the new iterate.
    pub fn step(&mut self) -> Result<&DVector<f64>> {
        self.stepper.step_many(&mut self.theta, &mut self.rng, &mut self.buf);
        self.t += 1;
        self.stepper.guard(self.t, &self.theta[0])?;
        Ok(&self.theta[0])
    }

    /// The gradient draw used by the last step.
    pub fn last_gradient(&self) -> &DVector<f64> {
        self.buf.last_gradient(0)
    }

    pub fn advance(&mut self, steps: usize) -> Result<&DVector<f64>> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(&self.theta[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub spec_id: String,
    pub beta: f64,
    pub stream: RngStream,
    pub variant: ChainVariant,
    pub n_steps: usize,
    pub stride: usize,
    /// Time index of each stored iterate (multiples of `stride`, plus T).
    pub times: Vec<usize>,
    /// Stored iterates as columns (d × times.len()).
    pub iterates: DMatrix<f64>,
    /// Column t is the gradient draw that moved θ_t to θ_{t+1}.
    pub draws: Option<DMatrix<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iterate(&self, i: usize) -> DVector<f64> {
        self.iterates.column(i).into_owned()
    }

    pub fn last(&self) -> DVector<f64> {
        self.iterate(self.times.len() - 1)
    }
}

/// Short identifier of a spec: objective, dimension and a hash of its data.
pub fn spec_id(spec: &ProblemSpec) -> String {
    let text = format!(
        "{:?}|{:?}|{:?}|{}|{}|{}|{}|{}|{:?}",
        spec.objective,
        spec.theta_star.as_slice(),
        spec.sigma_matrix.as_slice(),
        spec.mu,
        spec.big_l,
        spec.l_sigma,
        spec.sigma_sq,
        spec.l_w,
        spec.ball_radius
    );
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let kind = match spec.objective {
        ObjectiveKind::Quadratic => "quadratic",
        ObjectiveKind::LeastSquaresRandomDesign => "least_squares",
        ObjectiveKind::LogisticBall => "logistic_ball",
    };
    format!("{kind}-d{}-{h:016x}", spec.dim)
}

/// Runs `n_steps` steps of the given variant from `theta0`.
#[allow(clippy::too_many_arguments)]
pub fn run_variant(
    spec: &ProblemSpec,
    noise: &NoiseModel,
    beta: f64,
    variant: ChainVariant,
    theta0: &DVector<f64>,
    n_steps: usize,
    stream: RngStream,
    options: &RunOptions,
) -> Result<Trajectory> {
    let stepper = Stepper::new(spec, noise, beta, variant, options)?;
    let mut chain = stepper.chain(theta0.clone(), stream)?;
    let entries = (n_steps + 1).saturating_mul(spec.dim);
    let stride = entries.div_ceil(MAX_STORED_ENTRIES).max(1);
    let record = options.record_draws && stride == 1;
    let d = spec.dim;
    let mut times = vec![0];
    let mut iterates: Vec<f64> = theta0.iter().copied().collect();
    let mut draws: Option<Vec<f64>> = record.then(|| Vec::with_capacity(n_steps * d));
    for t in 1..=n_steps {
        chain.step()?;
        if let Some(buf) = draws.as_mut() {
            buf.extend(chain.last_gradient().iter());
        }
        if t % stride == 0 || t == n_steps {
            times.push(t);
            iterates.extend(chain.theta().iter());
        }
    }
    let iterates = DMatrix::from_vec(d, times.len(), iterates);
    let draws = draws.map(|buf| DMatrix::from_vec(d, n_steps, buf));
    Ok(Trajectory {
        spec_id: spec_id(spec),
        beta,
        stream,
        variant,
        n_steps,
        stride,
        times,
        iterates,
        draws,
    })
}

/// The basic constant step-size SGD chain.
pub fn run_chain(
    spec: &ProblemSpec,
    noise: &NoiseModel,
    beta: f64,
    theta0: &DVector<f64>,
    n_steps: usize,
    stream: RngStream,
    options: &RunOptions,
) -> Result<Trajectory> {
    run_variant(spec, noise, beta, ChainVariant::Plain, theta0, n_steps, stream, options)
}

/// SGD followed by projection onto the ball of radius `spec.ball_radius`.
pub fn run_projected_chain(
    spec: &ProblemSpec,
    noise: &NoiseModel,
    beta: f64,
    theta0: &DVector<f64>,
    n_steps: usize,
    stream: RngStream,
    options: &RunOptions,
) -> Result<Trajectory> {
    run_variant(spec, noise, beta, ChainVariant::Projected, theta0, n_steps, stream, options)
}

/// Minibatch SGD averaging `batch` fresh draws per step.
#[allow(clippy::too_many_arguments)]
pub fn run_minibatch_chain(
    spec: &ProblemSpec,
    noise: &NoiseModel,
    beta: f64,
    batch: usize,
    theta0: &DVector<f64>,
    n_steps: usize,
    stream: RngStream,
    options: &RunOptions,
) -> Result<Trajectory> {
    run_variant(spec, noise, beta, ChainVariant::Minibatch { batch }, theta0, n_steps, stream, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_lands_on_sphere() {
        let mut v = DVector::from_vec(vec![3.0, 4.0]);
        project_onto_ball(&mut v, 2.5);
        assert!(v.norm() <= 2.5);
        assert!((v.norm() - 2.5).abs() < 1e-15);
        assert!((v[0] / v[1] - 0.75).abs() < 1e-15);
        let mut inside = DVector::from_vec(vec![0.1, 0.1]);
        project_onto_ball(&mut inside, 1.0);
        assert_eq!(inside, DVector::from_vec(vec![0.1, 0.1]));
    }

    #[test]
    fn stride_caps_storage() {
        let spec = ProblemSpec::scalar_quadratic(0.0, 1.0).unwrap();
        let noise = NoiseModel::isotropic_gaussian(1, 0.0);
        let n = MAX_STORED_ENTRIES + 1;
        let tr = run_chain(&spec, &noise, 0.1, &DVector::from_element(1, 1.0), n, RngStream::new(0), &RunOptions::default())
            .unwrap();
        assert_eq!(tr.stride, 2);
        assert_eq!(*tr.times.last().unwrap(), n);
        assert!(tr.len() <= MAX_STORED_ENTRIES / 2 + 2);
    }
}

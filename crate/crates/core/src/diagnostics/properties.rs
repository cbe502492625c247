//! Exact properties checked on random instances.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::combinatorics::{geometric_sum_bound, geometric_sum_direct, trinomial_identity};
use super::report::BoundCheck;
use crate::engine::project_onto_ball;
use crate::error::{Error, Result};
use crate::model::step_size::GRADIENT_STEP_CONTRACTION;
use crate::model::{gradient, validate_step_size, ObjectiveKind, ProblemSpec};
use crate::rng::RngStream;

/// Relative tolerance for identities evaluated in floating point.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Largest relative excess of the direct double sum over the closed-form
/// bound, over `instances` random (C, α, n ≤ 200).
pub fn check_geometric_sum(instances: usize, stream: RngStream) -> Result<BoundCheck> {
    let mut rng = stream.rng();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..instances {
        let c = rng.random_range(0.01..10.0);
        let alpha = rng.random_range(1e-3..0.999);
        let n = rng.random_range(1..=200usize);
        let bound = geometric_sum_bound(c, alpha, n)?;
        worst = worst.max((geometric_sum_direct(c, alpha, n) - bound) / bound);
    }
    Ok(BoundCheck::at_most("geometric_sum.bound", format!("max relative excess over {instances} instances"), worst, 0.0, IDENTITY_TOL))
}

/// Number of (p, l) with 2 ≤ l ≤ 2p, p ≤ `p_max`, where the identity fails.
pub fn check_trinomial(p_max: u64) -> Result<BoundCheck> {
    let mut failures = 0u32;
    for p in 1..=p_max {
        for l in 2..=2 * p {
            let (lhs, rhs) = trinomial_identity(p, l)?;
            if lhs != rhs {
                failures += 1;
            }
        }
    }
    Ok(BoundCheck::at_most("trinomial.identity", format!("mismatches for p <= {p_max}"), f64::from(failures), 0.0, 0.0))
}

/// max ‖g(θ) − g(θ′)‖/‖θ − θ′‖ over random pairs, g = id − β∇L, against
/// 1 − βμ.
pub fn check_gradient_step(spec: &ProblemSpec, beta: f64, pairs: usize, stream: RngStream) -> Result<BoundCheck> {
    let report = validate_step_size(spec, beta, None);
    let entry = report.get(GRADIENT_STEP_CONTRACTION).expect("entry present");
    if !entry.admissible {
        return Err(Error::InadmissibleStepSize {
            beta,
            condition: GRADIENT_STEP_CONTRACTION.into(),
            threshold: entry.threshold,
        });
    }
    let mut rng = stream.rng();
    let d = spec.dim;
    let scale = spec.ball_radius.unwrap_or(1.0 + spec.theta_star.norm());
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let z = DVector::<f64>::from_fn(d, |_, _| rng.sample(StandardNormal));
        let mut t = match spec.ball_radius {
            Some(_) => z * scale,
            None => &spec.theta_star + z * scale,
        };
        if let Some(r) = spec.ball_radius {
            project_onto_ball(&mut t, r);
        }
        t
    };
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let gap = (&a - &b).norm();
        if gap == 0.0 {
            continue;
        }
        let ga = &a - gradient(spec, &a)? * beta;
        let gb = &b - gradient(spec, &b)? * beta;
        worst = worst.max((ga - gb).norm() / gap);
    }
    let bound = 1.0 - beta * spec.mu;
    let tol = if spec.objective == ObjectiveKind::LogisticBall { 1e-8 } else { 1e-12 };
    Ok(BoundCheck::at_most("gradient_step.contraction", format!("max ratio over {pairs} pairs"), worst, bound, tol))
}

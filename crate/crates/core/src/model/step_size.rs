use serde::{Deserialize, Serialize};

use super::spec::ProblemSpec;

/// Identifiers of the step-size conditions, in report order.
pub const ERGODICITY: &str = "ergodicity";
pub const W2_CONTRACTION: &str = "w2_contraction";
pub const DIMENSION_FREE_DEVIATION: &str = "dimension_free_deviation";
pub const FINITE_MOMENTS: &str = "finite_moments";
pub const GRADIENT_STEP_CONTRACTION: &str = "gradient_step_contraction";
pub const TAIL_AVERAGE: &str = "tail_average";
pub const SUBEXP_TRANSFER: &str = "subexp_transfer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub condition_id: String,
    pub threshold: f64,
    /// `true` when β must be strictly below the threshold.
    pub strict: bool,
    pub admissible: bool,
    pub formula: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizeReport {
    pub beta: f64,
    pub conditions: Vec<ConditionEntry>,
}

impl StepSizeReport {
    pub fn get(&self, id: &str) -> Option<&ConditionEntry> {
        self.conditions.iter().find(|c| c.condition_id == id)
    }

    pub fn admits(&self, id: &str) -> bool {
        self.get(id).is_some_and(|c| c.admissible)
    }
}

/// Parameters of the finite-moment condition: the moment order `j` and the
/// growth constant `k` with ‖ε(θ)‖_{L_p} ≤ k‖θ − θ*‖ + const.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteMomentsCondition {
    pub j: u32,
    pub k: f64,
}

fn entry(id: &str, beta: f64, threshold: f64, strict: bool, formula: &str) -> ConditionEntry {
    let admissible = if strict { beta < threshold } else { beta <= threshold };
    ConditionEntry {
        condition_id: id.to_string(),
        threshold,
        strict,
        admissible,
        formula: formula.to_string(),
    }
}

pub fn ergodicity_threshold(spec: &ProblemSpec) -> f64 {
    let mu = spec.mu;
    2.0 * mu / (mu * mu + (mu * spec.big_l).max(spec.l_sigma))
}

pub fn w2_contraction_threshold(spec: &ProblemSpec) -> f64 {
    let mu = spec.mu;
    2.0 * mu / (mu * mu + spec.l_w.max(mu * spec.big_l))
}

pub fn dimension_free_threshold(spec: &ProblemSpec) -> f64 {
    spec.mu / (spec.mu * spec.mu + spec.l_sigma)
}

/// Checks `beta` against every step-size condition. Inadmissibility is part
/// of the report, never an error.
pub fn validate_step_size(spec: &ProblemSpec, beta: f64, moments: Option<FiniteMomentsCondition>) -> StepSizeReport {
    let mu = spec.mu;
    let mut conditions = vec![
        entry(ERGODICITY, beta, ergodicity_threshold(spec), true, "2mu/(mu^2 + max(mu*L, L_sigma))"),
        entry(W2_CONTRACTION, beta, w2_contraction_threshold(spec), true, "2mu/(mu^2 + max(L_W, mu*L))"),
        entry(DIMENSION_FREE_DEVIATION, beta, dimension_free_threshold(spec), false, "mu/(mu^2 + L_sigma)"),
    ];
    if let Some(FiniteMomentsCondition { j, k }) = moments {
        let t = mu / (f64::from(j.max(1)) * (mu * mu + k * k));
        conditions.push(entry(FINITE_MOMENTS, beta, t, false, "mu/(j(mu^2 + K^2))"));
    }
    conditions.push(entry(
        GRADIENT_STEP_CONTRACTION,
        beta,
        2.0 / (mu + spec.big_l),
        false,
        "2/(mu + L)",
    ));
    // Both parts of the tail-average condition are strict.
    let tail = w2_contraction_threshold(spec).min(dimension_free_threshold(spec));
    conditions.push(entry(TAIL_AVERAGE, beta, tail, true, "min(2mu/(mu^2 + max(mu*L, L_W)), mu/(mu^2 + L_sigma))"));
    conditions.push(entry(SUBEXP_TRANSFER, beta, 1.0 / (2.0 * mu), false, "1/(2mu)"));
    StepSizeReport { beta, conditions }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mu: f64, l_sigma: f64) -> ProblemSpec {
        let mut s = ProblemSpec::scalar_quadratic(0.0, mu).unwrap();
        s.l_sigma = l_sigma;
        s
    }

    #[test]
    fn ergodicity_examples() {
        let r = validate_step_size(&spec(1.0, 0.0), 0.5, None);
        let e = r.get(ERGODICITY).unwrap();
        assert_eq!(e.threshold, 1.0);
        assert!(e.admissible);
        let r = validate_step_size(&spec(1.0, 3.0), 1.0, None);
        let e = r.get(ERGODICITY).unwrap();
        assert_eq!(e.threshold, 0.5);
        assert!(!e.admissible);
    }

    #[test]
    fn dimension_free_example() {
        let r = validate_step_size(&spec(1.0, 0.0), 0.5, None);
        let e = r.get(DIMENSION_FREE_DEVIATION).unwrap();
        assert_eq!(e.threshold, 1.0);
        assert!(e.admissible);
        // Non-strict: equality admitted.
        assert!(validate_step_size(&spec(1.0, 0.0), 1.0, None).admits(DIMENSION_FREE_DEVIATION));
        assert!(!validate_step_size(&spec(1.0, 0.0), 1.0, None).admits(ERGODICITY));
    }

    #[test]
    fn finite_moment_entry_only_when_requested() {
        assert!(validate_step_size(&spec(1.0, 0.0), 0.1, None).get(FINITE_MOMENTS).is_none());
        let r = validate_step_size(&spec(1.0, 0.0), 0.1, Some(FiniteMomentsCondition { j: 4, k: 1.0 }));
        assert_eq!(r.get(FINITE_MOMENTS).unwrap().threshold, 1.0 / 8.0);
    }
}

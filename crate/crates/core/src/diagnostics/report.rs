//! Bound checks and the report that collects them.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::concentration::ConcentrationEstimate;
use super::stats::LinearFit;
use crate::engine::io::fmt_f64;
use crate::error::Result;
use crate::model::{ConstantProvenance, NoiseModel, ObjectiveKind, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// empirical ≤ bound + mc_error.
    AtMost,
    /// empirical ≥ bound − mc_error.
    AtLeast,
    /// lower − mc_error ≤ empirical ≤ bound + mc_error.
    Between,
}

/// One point of an aggregated check (a δ, a lag, a step, a sample size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckPoint {
    pub key: String,
    pub empirical: f64,
    pub bound: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lower: Option<f64>,
    pub mc_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub claim_id: String,
    pub label: String,
    pub relation: Relation,
    pub empirical: f64,
    pub bound: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lower: Option<f64>,
    /// Distance to the violated side (negative when the raw value is past
    /// the bound, before the Monte Carlo allowance).
    pub margin: f64,
    pub mc_error: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub details: Vec<CheckPoint>,
}

fn evaluate(relation: Relation, empirical: f64, bound: f64, lower: Option<f64>, mc_error: f64) -> (f64, bool) {
    let margin = match relation {
        Relation::AtMost => bound - empirical,
        Relation::AtLeast => empirical - bound,
        Relation::Between => (bound - empirical).min(empirical - lower.unwrap_or(f64::NEG_INFINITY)),
    };
    let pass = !margin.is_nan() && margin + mc_error >= 0.0;
    (margin, pass)
}

impl CheckPoint {
    pub fn at_most(key: impl Into<String>, empirical: f64, bound: f64, mc_error: f64) -> Self {
        let (_, pass) = evaluate(Relation::AtMost, empirical, bound, None, mc_error);
        CheckPoint { key: key.into(), empirical, bound, lower: None, mc_error, pass }
    }

    pub fn between(key: impl Into<String>, empirical: f64, lower: f64, upper: f64, mc_error: f64) -> Self {
        let (_, pass) = evaluate(Relation::Between, empirical, upper, Some(lower), mc_error);
        CheckPoint { key: key.into(), empirical, bound: upper, lower: Some(lower), mc_error, pass }
    }

    fn slack(&self) -> f64 {
        let lo = self.lower.map_or(f64::INFINITY, |l| self.empirical - l);
        (self.bound - self.empirical).min(lo) + self.mc_error
    }
}

impl BoundCheck {
    fn build(
        claim_id: &str,
        label: impl Into<String>,
        relation: Relation,
        empirical: f64,
        bound: f64,
        lower: Option<f64>,
        mc_error: f64,
    ) -> Self {
        let (margin, pass) = evaluate(relation, empirical, bound, lower, mc_error);
        BoundCheck {
            claim_id: claim_id.to_string(),
            label: label.into(),
            relation,
            empirical,
            bound,
            lower,
            margin,
            mc_error,
            pass,
            flags: Vec::new(),
            note: None,
            details: Vec::new(),
        }
    }

    pub fn at_most(claim_id: &str, label: impl Into<String>, empirical: f64, bound: f64, mc_error: f64) -> Self {
        Self::build(claim_id, label, Relation::AtMost, empirical, bound, None, mc_error)
    }

    pub fn at_least(claim_id: &str, label: impl Into<String>, empirical: f64, bound: f64, mc_error: f64) -> Self {
        Self::build(claim_id, label, Relation::AtLeast, empirical, bound, None, mc_error)
    }

    pub fn between(
        claim_id: &str,
        label: impl Into<String>,
        empirical: f64,
        lower: f64,
        upper: f64,
        mc_error: f64,
    ) -> Self {
        Self::build(claim_id, label, Relation::Between, empirical, upper, Some(lower), mc_error)
    }

    /// A check that passes iff every point passes; the headline numbers are
    /// those of the point closest to (or furthest past) its bound.
    pub fn aggregate(claim_id: &str, label: impl Into<String>, details: Vec<CheckPoint>) -> Self {
        let worst = details
            .iter()
            .min_by(|a, b| a.slack().total_cmp(&b.slack()))
            .cloned();
        let mut check = match worst {
            Some(w) => {
                let relation = if w.lower.is_some() { Relation::Between } else { Relation::AtMost };
                Self::build(claim_id, label, relation, w.empirical, w.bound, w.lower, w.mc_error)
            }
            None => {
                let mut c = Self::build(claim_id, label, Relation::AtMost, 0.0, 0.0, None, 0.0);
                c.flags.push("no_points".into());
                c
            }
        };
        check.pass = details.iter().all(|p| p.pass);
        check.details = details;
        check
    }

    pub fn with_flag(mut self, flag: impl Into<String>) -> Self {
        self.flags.push(flag.into());
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Marks the check as uninformative: it passes, carrying `flag`.
    pub fn uninformative(mut self, flag: impl Into<String>) -> Self {
        self.pass = true;
        self.flags.push(flag.into());
        self
    }

    pub fn summary_line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let rel = match self.relation {
            Relation::AtMost => format!("<= {:.6e}", self.bound),
            Relation::AtLeast => format!(">= {:.6e}", self.bound),
            Relation::Between => format!("in [{:.6e}, {:.6e}]", self.lower.unwrap_or(f64::NAN), self.bound),
        };
        let mut line = format!(
            "{verdict} {} [{}] empirical={:.6e} {rel} mc_error={:.3e} margin={:.3e}",
            self.claim_id, self.label, self.empirical, self.mc_error, self.margin
        );
        if !self.flags.is_empty() {
            line.push_str(&format!(" flags={}", self.flags.join("|")));
        }
        line
    }
}

/// The inequality each claim id verifies.
pub const CLAIMS: &[(&str, &str)] = &[
    ("stationary.variance", "Var(theta) <= beta sigma^2 / (2 mu - beta (mu^2 + L_sigma)) under the invariant law"),
    ("stationary.bias", "|E theta - theta*| <= sqrt(beta sigma^2 / (2 mu - beta (mu^2 + L_sigma)))"),
    ("stationary.mean_linear", "E theta = theta* under the invariant law when the gradient is linear"),
    ("stationary.oracle_variance", "Var(theta) = tr V with V = A V A^T + beta^2 C (linear-Gaussian closed form)"),
    ("moments.oracle_l2", "(E|theta - theta*|^2)^(1/2) = sqrt(tr V) (linear-Gaussian closed form)"),
    ("transfer.psi2_tilde_norm", "|theta - theta*| is sub-Gaussian (tilde) with constant K_bar sqrt(8 beta / mu)"),
    ("transfer.psi1_tilde_norm", "|theta - theta*| is sub-exponential (tilde) with constant 2 K_bar_1 sqrt(beta / mu) when beta <= 1/(2 mu)"),
    ("transfer.psi2_lipschitz", "f(theta) - E f(theta) is sub-Gaussian with constant K sqrt(beta / mu) for 1-Lipschitz f"),
    ("transfer.psi1_lipschitz", "f(theta) - E f(theta) is sub-exponential with constant K sqrt(beta / mu) for 1-Lipschitz f"),
    ("transfer.sqrt_beta_scaling", "log(concentration constant) vs log(beta) has slope 1/2"),
    ("finite_moments.stable", "M_j stabilizes under growing sample size when beta <= mu / (j (mu^2 + K^2))"),
    ("finite_moments.divergent", "moments of order above the noise tail index grow with the sample size"),
    ("coupling.contraction", "E|theta_{t+1} - theta'_{t+1}|^2 <= ((1 - beta mu)^2 + beta^2 L_W) E|theta_t - theta'_t|^2 under synchronous coupling"),
    ("coupling.oracle_ratio", "additive noise cancels under synchronous coupling: ratio = (1 - beta mu)^2"),
    ("tv.geometric_rate", "TV(law(theta_t), pi) decays at rate at most sqrt((1 - beta mu)^2 + beta^2 L_W)"),
    ("tv.empirical_vs_analytic", "binned empirical TV agrees with the closed-form TV curve"),
    ("drift.slope", "E[V(theta_{t+1}) | theta_t] regression slope <= (1 - beta mu)^2 + beta^2 L_sigma, V = 1 + |theta - theta*|^2"),
    ("drift.intercept", "E[V(theta_{t+1}) | theta_t] regression intercept <= beta^2 sigma^2 + 1 - slope"),
    ("deviation.last_iterate_subgaussian", "P(|theta_T - theta*| > K_bar sqrt(8 beta log(e/delta) / mu)) <= delta + remainder"),
    ("deviation.last_iterate_subexp", "P(|theta_T - theta*| > 4 e K_bar_1 log(2/delta) sqrt(beta / mu)) <= delta + remainder"),
    ("deviation.dimension_free_subgaussian", "P(|theta_T - theta*| > sqrt(beta sigma^2 / mu) + 2 K sqrt(beta log(1/delta) / mu)) <= delta + remainder"),
    ("deviation.dimension_free_subexp", "P(|theta_T - theta*| > sqrt(beta sigma^2 / mu) + 2 K max(sqrt(beta log(1/delta) / mu), beta log(1/delta))) <= delta + remainder"),
    ("covariance.decay_bound", "E<theta_i - theta*, theta_j - theta*> <= 2 (1 - beta mu)^|i-j| (alpha_W^i W2^2(nu, pi) + Var_pi)"),
    ("covariance.oracle_autocov", "E<theta_i - theta*, theta_{i+k} - theta*> = tr(A^k V) at stationarity (linear-Gaussian closed form)"),
    ("trajectory.lipschitz_concentration", "F(theta_1..theta_n) - E F is sub-Gaussian with constant K C_W sqrt(beta / mu + (n - 1) beta^2) from stationarity"),
    ("average.deviation", "P(|tail average - theta*| > variance term + deviation term) <= Upsilon delta"),
    ("average.deviation_subexp", "sub-exponential variant of the tail-average radius, failure probability Upsilon delta"),
    ("average.oracle_rms", "RMS error of the tail average matches its closed-form Gaussian law"),
    ("average.rate", "RMS error of the tail average scales as n^(-1/2)"),
    ("minibatch.boundedness", "P(max_s |theta_s - theta*| > C) <= delta for admissible batch size and step size"),
    ("matrix.operator_norm", "P(|mean of N symmetric noise matrices|_2 > 3 K_Xi phi((log(2/delta) + 3d)/N)) <= delta"),
    ("matrix.vector_norm", "P(|mean of N noise vectors| > 4 K_xi phi((log(2/delta) + 2d)/N)) <= delta"),
    ("geometric_sum.bound", "sum_{i,j<=n} C alpha^|i-j| <= C (n + (2 alpha/(1 - alpha))(n - (1 - alpha^n)/(1 - alpha)))"),
    ("trinomial.identity", "sum_k (p; k, k+p-l, l-2k) 2^(l-2k) = C(2p, l)"),
    ("gradient_step.contraction", "|g(theta) - g(theta')| <= (1 - beta mu)|theta - theta'| for g = id - beta grad, beta <= 2/(mu + L)"),
];

pub fn claim_description(claim_id: &str) -> Option<&'static str> {
    CLAIMS.iter().find(|(id, _)| *id == claim_id).map(|(_, d)| *d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecSummary {
    pub objective: ObjectiveKind,
    pub dim: usize,
    pub theta_star: Vec<f64>,
    pub mu: f64,
    pub big_l: f64,
    pub l_sigma: f64,
    pub sigma_sq: f64,
    pub l_w: f64,
    pub k_bar: Option<f64>,
    pub k_bar_subexp: Option<f64>,
    pub k_lip: Option<f64>,
    pub ball_radius: Option<f64>,
    pub noise: String,
    pub gradient_exact: bool,
    pub provenance: Vec<ConstantProvenance>,
}

impl SpecSummary {
    pub fn new(spec: &ProblemSpec, noise: &NoiseModel) -> Self {
        SpecSummary {
            objective: spec.objective,
            dim: spec.dim,
            theta_star: spec.theta_star.iter().copied().collect(),
            mu: spec.mu,
            big_l: spec.big_l,
            l_sigma: spec.l_sigma,
            sigma_sq: spec.sigma_sq,
            l_w: spec.l_w,
            k_bar: spec.k_bar,
            k_bar_subexp: spec.k_bar_subexp,
            k_lip: spec.k_lip,
            ball_radius: spec.ball_radius,
            noise: noise.kind().name().to_string(),
            gradient_exact: spec.gradient_is_exact(),
            provenance: spec.provenance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub label: String,
    pub estimate: ConcentrationEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub fit: LinearFit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    /// Replica (or trial) counts per experiment component.
    pub replica_counts: BTreeMap<String, usize>,
    /// Named sub-streams used, as (seed, stream) pairs.
    pub streams: BTreeMap<String, (u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub experiment: String,
    pub spec: Option<SpecSummary>,
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub beta_grid: Vec<f64>,
    pub checks: Vec<BoundCheck>,
    pub estimates: Vec<NamedEstimate>,
    pub scaling_fits: Vec<ScalingFit>,
    pub provenance: Provenance,
    pub notes: Vec<String>,
    /// Seconds since the Unix epoch; the only field allowed to differ
    /// between two runs of the same configuration.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timestamp: Option<u64>,
}

impl DiagnosticsReport {
    pub fn new(experiment: impl Into<String>, master_seed: u64) -> Self {
        DiagnosticsReport {
            experiment: experiment.into(),
            spec: None,
            beta: None,
            beta_grid: Vec::new(),
            checks: Vec::new(),
            estimates: Vec::new(),
            scaling_fits: Vec::new(),
            provenance: Provenance { master_seed, ..Default::default() },
            notes: Vec::new(),
            timestamp: None,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BoundCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn add_estimate(&mut self, label: impl Into<String>, estimate: ConcentrationEstimate) {
        self.estimates.push(NamedEstimate { label: label.into(), estimate });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn stamp_now(&mut self) {
        self.timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per check.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "claim_id,label,relation,empirical,bound,lower,margin,mc_error,pass,flags")?;
        for c in &self.checks {
            let relation = match c.relation {
                Relation::AtMost => "at_most",
                Relation::AtLeast => "at_least",
                Relation::Between => "between",
            };
            writeln!(
                w,
                "{},{},{relation},{},{},{},{},{},{},{}",
                c.claim_id,
                csv_field(&c.label),
                fmt_f64(c.empirical),
                fmt_f64(c.bound),
                c.lower.map(fmt_f64).unwrap_or_default(),
                fmt_f64(c.margin),
                fmt_f64(c.mc_error),
                c.pass,
                c.flags.join("|"),
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&c.summary_line());
            out.push('\n');
        }
        let passed = self.checks.iter().filter(|c| c.pass).count();
        out.push_str(&format!("{passed}/{} checks passed\n", self.checks.len()));
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_rule() {
        assert!(BoundCheck::at_most("x", "", 1.05, 1.0, 0.1).pass);
        assert!(!BoundCheck::at_most("x", "", 1.2, 1.0, 0.1).pass);
        assert!(BoundCheck::at_least("x", "", 0.95, 1.0, 0.1).pass);
        assert!(!BoundCheck::between("x", "", 0.3, 0.4, 0.6, 0.05).pass);
        assert!(!BoundCheck::at_most("x", "", f64::NAN, 1.0, 0.1).pass);
    }

    #[test]
    fn aggregate_reports_worst() {
        let pts = vec![
            CheckPoint::at_most("a", 0.1, 1.0, 0.0),
            CheckPoint::at_most("b", 0.9, 1.0, 0.0),
        ];
        let c = BoundCheck::aggregate("x", "", pts);
        assert!(c.pass);
        assert_eq!(c.empirical, 0.9);
    }

    #[test]
    fn claims_unique() {
        let mut ids: Vec<_> = CLAIMS.iter().map(|c| c.0).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), CLAIMS.len());
    }
}

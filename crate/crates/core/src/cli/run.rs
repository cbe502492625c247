//! Experiment orchestration: runs the engine for each experiment kind,
//! feeds the results to the diagnostics and collects report and data files.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use nalgebra::{DMatrix, DVector};

use super::config::{ExperimentConfig, ExperimentKind, InitKind};
use crate::diagnostics::dynamics::{autocovariances, fit_tv_rate};
use crate::diagnostics::stationary::{distances, BURN_IN_FLAG};
use crate::diagnostics::{
    analytic_tv_curve, attest_burn_in, bounds, check_concentration_transfer, check_coupling_contraction,
    check_covariance_decay, check_drift_condition, check_finite_moments, check_geometric_sum, check_gradient_step,
    check_last_iterate_deviation, check_matrix_concentration, check_minibatch_boundedness, check_oracle_stationary,
    check_pr_average_bound, check_sqrt_beta_scaling, check_trajectory_lipschitz, check_trinomial, check_tv_decay,
    check_variance_bias_bounds, empirical_tv_curve, exact_coupling_ratio, AverageSamples, BoundCheck,
    DiagnosticsReport, Family, InitialLaw, MatrixNoiseGenerator, SpecSummary, TvCurve,
};
use crate::engine::io::{fmt_f64, write_coupling_csv, write_ensemble_csv};
use crate::engine::{map_replicas, run_coupled_pair, run_ensemble, ChainVariant, InitSampler, RunOptions, Stepper};
use crate::error::{Error, Result};
use crate::model::{FiniteMomentsCondition, NoiseModel, ProblemSpec};
use crate::oracle::{oracle_for, OracleSolution};
use crate::rng::RngStream;

/// A data file produced by an experiment, written verbatim to the output
/// directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataFile {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: DiagnosticsReport,
    pub files: Vec<DataFile>,
}

impl ExperimentOutput {
    /// 0 when every check passes, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.report.all_pass() {
            0
        } else {
            2
        }
    }
}

/// Writes report.json, report.csv, summary.txt and the data files into `dir`.
pub fn write_artifacts(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), out.report.to_json()?)?;
    let mut csv = Vec::new();
    out.report.write_csv(&mut csv)?;
    std::fs::write(dir.join("report.csv"), csv)?;
    std::fs::write(dir.join("summary.txt"), out.report.summary())?;
    for f in &out.files {
        std::fs::write(dir.join(&f.name), &f.contents)?;
    }
    Ok(())
}

/// Default sizes of the `full_suite` components.
const SUITE_COUPLING_PAIRS: usize = 10_000;
const SUITE_COUPLING_STEPS: usize = 50;
const SUITE_LAGS: usize = 20;
const SUITE_TRAJECTORY_N: usize = 50;
const SUITE_TRAJECTORY_REPLICAS: usize = 20_000;
const SUITE_AVERAGE_REPLICAS: usize = 10_000;
const SUITE_AVERAGE_N: [usize; 2] = [100, 1000];
const SUITE_N0: usize = 200;
const SUITE_PROPERTY_INSTANCES: usize = 1000;
const SUITE_TRINOMIAL_P: u64 = 12;
const DEFAULT_DRIFT_BINS: usize = 20;
const DEFAULT_TV_HORIZON: usize = 80;

/// Problem, step size and derived closed-form law for one chain.
struct Problem {
    spec: ProblemSpec,
    noise: NoiseModel,
    beta: f64,
    variant: ChainVariant,
    oracle: Option<OracleSolution>,
}

impl Problem {
    fn new(spec: ProblemSpec, noise: NoiseModel, beta: f64, variant: ChainVariant) -> Self {
        let oracle = oracle_for(&spec, &noise, beta).ok();
        Problem { spec, noise, beta, variant, oracle }
    }
}

struct Runner<'c> {
    cfg: &'c ExperimentConfig,
    master: RngStream,
    options: RunOptions,
    report: DiagnosticsReport,
    files: Vec<DataFile>,
    fitted_rho: Option<f64>,
}

/// Errors that mean "this component does not apply here" rather than a
/// failed run.
fn is_skippable(e: &Error) -> bool {
    matches!(e, Error::Unsupported(_) | Error::MissingConstant(_) | Error::TooFewSamples { .. })
}

fn label_beta(checks: &mut [BoundCheck], beta: f64) {
    for c in checks {
        c.label = format!("{} [beta={beta}]", c.label);
    }
}

fn sq_dist_of(init: &InitSampler, theta_star: &DVector<f64>) -> f64 {
    match init {
        InitSampler::Point(p) => (p - theta_star).norm_squared(),
        InitSampler::Gaussian { mean, cov } => (mean - theta_star).norm_squared() + cov.trace(),
    }
}

fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

impl<'c> Runner<'c> {
    fn stream(&mut self, label: &str) -> RngStream {
        let s = self.master.split_named(label);
        self.report.provenance.streams.insert(label.to_string(), (s.seed(), s.stream()));
        s
    }

    fn count(&mut self, label: &str, n: usize) {
        self.report.provenance.replica_counts.insert(label.to_string(), n);
    }

    fn push(&mut self, checks: impl IntoIterator<Item = BoundCheck>) {
        self.report.checks.extend(checks);
    }

    fn file(&mut self, name: &str, contents: String) {
        self.files.push(DataFile { name: name.to_string(), contents });
    }

    fn file_bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.file(name, String::from_utf8(bytes).expect("CSV writers emit UTF-8"));
    }

    /// Runs an optional component; inapplicable ones leave a note.
    fn optional<T>(&mut self, what: &str, res: Result<T>) -> Result<Option<T>> {
        match res {
            Ok(v) => Ok(Some(v)),
            Err(e) if is_skippable(&e) => {
                info!("{what}: skipped ({e})");
                self.report.note(format!("{what} skipped: {e}"));
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    fn init(&self, p: &Problem) -> Result<InitSampler> {
        self.cfg.init_sampler(self.cfg.init.as_ref(), "init", &p.spec, &p.noise, p.beta)
    }

    fn directions(&self, d: usize) -> Result<Vec<DVector<f64>>> {
        if let Some(dirs) = &self.cfg.directions {
            return dirs
                .iter()
                .map(|u| {
                    if u.len() != d || u.iter().all(|x| *x == 0.0) {
                        Err(self.cfg.err("directions", format!("each direction needs {d} entries, not all zero")))
                    } else {
                        Ok(DVector::from_column_slice(u))
                    }
                })
                .collect();
        }
        let mut dirs: Vec<DVector<f64>> = (0..d.min(3))
            .map(|i| {
                let mut e = DVector::zeros(d);
                e[i] = 1.0;
                e
            })
            .collect();
        if d > 1 {
            dirs.push(DVector::from_element(d, 1.0));
        }
        Ok(dirs)
    }

    /// Stationary-law checks on one ensemble at step size `p.beta`. Returns
    /// the terminal snapshot and whether burn-in was attested.
    fn stationary(&mut self, p: &Problem, steps: usize, with_drift: bool) -> Result<(DMatrix<f64>, bool)> {
        let cfg = self.cfg;
        let n = cfg.n_replicas()?;
        let init = self.init(p)?;
        let mut times: Vec<usize> = cfg.snapshot_times.clone().unwrap_or_default();
        times.extend([steps / 2, steps.saturating_sub(1), steps]);
        times.sort_unstable();
        times.dedup();
        info!("stationary: {n} replicas x {steps} steps at beta = {}", p.beta);
        let stream = self.stream(&format!("stationary beta={}", p.beta));
        self.count(&format!("stationary beta={}", p.beta), n);
        let ens = run_ensemble(&p.spec, &p.noise, p.beta, p.variant, &init, steps, &times, n, stream, &self.options)?;
        let full = ens.snapshot_at(steps).expect("terminal snapshot").clone();
        let burn = attest_burn_in(ens.snapshot_at(steps / 2).expect("half snapshot"), &full);
        let mut checks = check_variance_bias_bounds(&full, &p.spec, p.beta)?;
        if let Some(o) = &p.oracle {
            checks.extend(check_oracle_stationary(&full, &p.spec, o)?);
        }
        if p.noise.is_light_tailed() {
            let subexp = !matches!(p.noise, NoiseModel::AdditiveGaussian { .. });
            let dirs = self.directions(p.spec.dim)?;
            let res = check_concentration_transfer(&full, &p.spec, &p.noise, p.beta, &dirs, subexp);
            if let Some(t) = self.optional("concentration transfer", res)? {
                checks.extend(t.checks);
                self.report.estimates.extend(t.estimates);
                self.report.notes.extend(t.notes);
            }
        }
        if with_drift && steps >= 1 {
            let prev = ens.snapshot_at(steps - 1).expect("previous snapshot");
            let bins = cfg.drift_bins.unwrap_or(DEFAULT_DRIFT_BINS);
            let drift = check_drift_condition(prev, &full, &p.spec, p.beta, bins)?;
            checks.extend(drift.checks);
            let mut csv = String::from("bin,mean_v,mean_next_v,count\n");
            for (i, b) in drift.bins.iter().enumerate() {
                let _ = writeln!(csv, "{i},{},{},{}", fmt_f64(b.mean_v), fmt_f64(b.mean_next_v), b.count);
            }
            self.file("drift_bins.csv", csv);
        }
        if let Some(m) = &cfg.moments {
            let dists = distances(&full, &p.spec.theta_star);
            let cond = FiniteMomentsCondition { j: m.j, k: m.k };
            let threshold = m.divergence_threshold.unwrap_or(crate::diagnostics::stationary::DEFAULT_DIVERGENCE_THRESHOLD);
            checks.extend(check_finite_moments(&dists, &p.spec, p.beta, cond, m.p_div, threshold)?);
        }
        if !burn.attested {
            self.report.note(format!(
                "burn-in not attested at beta = {} (mean z = {:.2}, variance z = {:.2})",
                p.beta, burn.mean_z, burn.var_z
            ));
            for c in &mut checks {
                c.flags.push(BURN_IN_FLAG.into());
            }
        }
        self.push(checks);
        let mut buf = Vec::new();
        write_ensemble_csv(&ens, &mut buf)?;
        self.file_bytes("ensemble.csv", buf);
        Ok((full, burn.attested))
    }

    /// Stationary checks across `grid`, with the √β scaling fit of the Ψ̃₂
    /// constant of ‖θ − θ*‖. Chains at smaller β run proportionally longer.
    fn stationary_grid(&mut self, spec: &ProblemSpec, noise: &NoiseModel, grid: &[f64]) -> Result<()> {
        let base_steps = self.cfg.steps()?;
        let bmax = grid.iter().copied().fold(f64::MIN, f64::max);
        let mut betas = Vec::new();
        let mut constants = Vec::new();
        let mut scaling_csv = String::from("beta,steps,psi2_tilde,std_error,bound\n");
        for &beta in grid {
            let steps = ((base_steps as f64) * bmax / beta).ceil() as usize;
            let p = Problem::new(spec.clone(), noise.clone(), beta, self.cfg.chain_variant());
            let first = self.report.checks.len();
            self.stationary(&p, steps, false)?;
            label_beta(&mut self.report.checks[first..], beta);
            if let Some(e) = self.report.estimates.iter().rev().find(|e| e.label.starts_with("psi2_tilde")) {
                let e = e.estimate.clone();
                let bound = spec.k_bar.map(|k| bounds::norm_psi2_tilde(k, spec, beta)).unwrap_or(f64::NAN);
                let _ = writeln!(
                    scaling_csv,
                    "{beta},{steps},{},{},{}",
                    fmt_f64(e.constant),
                    fmt_f64(e.std_error),
                    fmt_f64(bound)
                );
                let last = self.report.estimates.len() - 1;
                self.report.estimates[last].label = format!("psi2_tilde |theta - theta*| [beta={beta}]");
                betas.push(beta);
                constants.push(e.constant);
            }
        }
        self.files.retain(|f| f.name != "ensemble.csv");
        if betas.len() >= 2 {
            let (fit, check) = check_sqrt_beta_scaling("psi2_tilde |theta - theta*|", &betas, &constants)?;
            self.report.scaling_fits.push(fit);
            self.push([check]);
        } else {
            self.report.note("scaling fit needs the norm constant at two or more step sizes");
        }
        self.file("scaling.csv", scaling_csv);
        Ok(())
    }

    fn tv_decay(&mut self, p: &Problem) -> Result<()> {
        if p.spec.dim != 1 {
            return Err(Error::Unsupported("TV decay is computed in one dimension".into()));
        }
        let cfg = self.cfg;
        let tvc = cfg.tv.clone().unwrap_or_default();
        let steps = cfg.steps()?;
        let theta0 = tvc.theta0.unwrap_or(p.spec.theta_star[0] + 1.0);
        let times: Vec<usize> = match &tvc.times {
            Some(t) => t.clone(),
            None => (0..=steps.min(DEFAULT_TV_HORIZON)).step_by(2).collect(),
        };
        let analytic = match &p.oracle {
            Some(o) => Some(analytic_tv_curve(o, theta0, &times)?),
            None => None,
        };
        let empirical = if tvc.empirical.unwrap_or(true) {
            let n = tvc.n_replicas.map_or_else(|| cfg.n_replicas(), Ok)?;
            let horizon = *times.last().ok_or_else(|| cfg.err("tv.times", "must not be empty"))?;
            info!("tv_decay: {n} replicas x {horizon} steps, reference {n} x {steps}");
            let start = InitSampler::Point(DVector::from_element(1, theta0));
            let s = self.stream("tv");
            self.count("tv", n);
            let ens = run_ensemble(&p.spec, &p.noise, p.beta, p.variant, &start, horizon, &times, n, s, &self.options)?;
            let s = self.stream("tv reference");
            self.count("tv reference", n);
            let reference_start = InitSampler::Point(p.spec.theta_star.clone());
            let reference = run_ensemble(
                &p.spec,
                &p.noise,
                p.beta,
                p.variant,
                &reference_start,
                steps,
                &[steps],
                n,
                s,
                &self.options,
            )?;
            let snaps: Vec<Vec<f64>> = ens.snapshots.iter().map(|m| column(m, 0)).collect();
            Some(empirical_tv_curve(&snaps, &times, &column(reference.last_snapshot(), 0))?)
        } else {
            None
        };
        let checks = check_tv_decay(analytic.as_ref(), empirical.as_ref(), &p.spec, p.beta)?;
        if let Some(fit) = analytic.as_ref().or(empirical.as_ref()).and_then(fit_tv_rate) {
            self.fitted_rho = Some(fit.slope.exp());
        }
        self.push(checks);
        self.file("tv_curve.csv", tv_csv(&times, analytic.as_ref(), empirical.as_ref()));
        Ok(())
    }

    fn coupling(&mut self, p: &Problem, steps: usize, default_pairs: Option<usize>) -> Result<()> {
        let cfg = self.cfg;
        let c = cfg.coupling.clone().unwrap_or_default();
        let d = p.spec.dim;
        let init = |ic: &Option<super::config::InitConfig>, path: &str, sign: f64| -> Result<InitSampler> {
            match ic {
                Some(ic) => cfg.init_sampler(Some(ic), path, &p.spec, &p.noise, p.beta),
                None => Ok(InitSampler::Point(&p.spec.theta_star + DVector::from_element(d, sign))),
            }
        };
        let i1 = init(&c.init1, "coupling.init1", 1.0)?;
        let i2 = init(&c.init2, "coupling.init2", -1.0)?;
        let n_pairs = match (c.n_pairs, default_pairs) {
            (Some(n), _) | (None, Some(n)) => n,
            (None, None) => cfg.n_replicas()?,
        };
        info!("coupling: {n_pairs} pairs x {steps} steps");
        let s = self.stream("coupling");
        self.count("coupling", n_pairs);
        let run = run_coupled_pair(&p.spec, &p.noise, p.beta, p.variant, &i1, &i2, steps, n_pairs, s, &self.options)?;
        let exact = exact_coupling_ratio(&p.spec, &p.noise, p.beta);
        self.push(check_coupling_contraction(&run, &p.spec, p.beta, exact));
        let mut buf = Vec::new();
        write_coupling_csv(&run, &mut buf)?;
        self.file_bytes("coupling.csv", buf);
        Ok(())
    }

    /// Last-iterate deviation; reuses `samples` (terminal snapshot after T
    /// steps from the configured init) when given.
    fn last_iterate(&mut self, p: &Problem, samples: Option<(DMatrix<f64>, bool)>) -> Result<()> {
        let cfg = self.cfg;
        let steps = cfg.steps()?;
        let init = self.init(p)?;
        let (samples, attested) = match samples {
            Some(s) => s,
            None => {
                let n = cfg.n_replicas()?;
                info!("last_iterate: {n} replicas x {steps} steps");
                let s = self.stream("last_iterate");
                self.count("last_iterate", n);
                let times = [steps / 2, steps];
                let times: Vec<usize> = if times[0] == times[1] { vec![steps] } else { times.to_vec() };
                let ens = run_ensemble(&p.spec, &p.noise, p.beta, p.variant, &init, steps, &times, n, s, &self.options)?;
                let full = ens.last_snapshot().clone();
                let burn = attest_burn_in(ens.snapshot_at(steps / 2).expect("half snapshot"), &full);
                let mut buf = Vec::new();
                write_ensemble_csv(&ens, &mut buf)?;
                self.file_bytes("ensemble.csv", buf);
                (full, burn.attested)
            }
        };
        let remainder = cfg.remainder_mode(self.fitted_rho)?;
        let start = sq_dist_of(&init, &p.spec.theta_star);
        let mut checks = check_last_iterate_deviation(
            &samples,
            &p.spec,
            &p.noise,
            p.beta,
            &cfg.deltas(),
            steps,
            start,
            remainder,
        )?;
        if !attested {
            for c in &mut checks {
                c.flags.push(BURN_IN_FLAG.into());
            }
        }
        self.push(checks);
        Ok(())
    }

    fn covariance(&mut self, p: &Problem, lags: usize) -> Result<()> {
        let cfg = self.cfg;
        if !p.spec.objective.has_linear_gradient() {
            return Err(Error::Unsupported("covariance decay bound needs a linear gradient".into()));
        }
        let n = cfg.n_replicas()?;
        let (init, start_index, w2_sq) = match &p.oracle {
            Some(o) => (InitSampler::Gaussian { mean: o.stat_mean.clone(), cov: o.stat_cov.clone() }, 0, 0.0),
            None => {
                let init = self.init(p)?;
                // W₂²(ν, π) ≤ E‖X − θ*‖² + E_π‖θ − θ*‖² under the independent coupling.
                let w2 = sq_dist_of(&init, &p.spec.theta_star) + bounds::variance_bound(&p.spec, p.beta);
                (init, cfg.steps()?, w2)
            }
        };
        let times: Vec<usize> = (start_index..=start_index + lags).collect();
        info!("covariance: {n} replicas x {} steps", start_index + lags);
        let s = self.stream("covariance");
        self.count("covariance", n);
        let ens = run_ensemble(&p.spec, &p.noise, p.beta, p.variant, &init, start_index + lags, &times, n, s, &self.options)?;
        let checks = check_covariance_decay(&ens.snapshots, &p.spec, p.beta, start_index, w2_sq, p.oracle.as_ref())?;
        let acov = autocovariances(&ens.snapshots, &p.spec)?;
        let mut csv = String::from("lag,autocov,std_error,bound,exact\n");
        let mut ak = DMatrix::<f64>::identity(p.spec.dim, p.spec.dim);
        for (k, (c, se)) in acov.iter().enumerate() {
            let bound = bounds::covariance_bound(&p.spec, p.beta, k, start_index, w2_sq);
            let exact = p.oracle.as_ref().map(|o| {
                let v = (&ak * &o.stat_cov).trace();
                ak = &o.ar_matrix * &ak;
                fmt_f64(v)
            });
            let _ = writeln!(csv, "{k},{},{},{},{}", fmt_f64(*c), fmt_f64(*se), fmt_f64(bound), exact.unwrap_or_default());
        }
        self.push(checks);
        self.file("autocovariance.csv", csv);
        Ok(())
    }

    /// F(θ₀, …, θ_{n−1}) = n^{−1/2}Σ⟨u, θ_i⟩ with |u| = 1, which is
    /// 1-Lipschitz on the stacked trajectory, started from the stationary
    /// law (or after T burn-in steps when it is not known in closed form).
    fn trajectory(&mut self, p: &Problem, n: usize, replicas: usize) -> Result<()> {
        if !p.noise.is_light_tailed() {
            return Err(Error::Unsupported("trajectory concentration needs light-tailed noise".into()));
        }
        bounds::k_lip(&p.spec)?;
        let (init, burn) = match &p.oracle {
            Some(o) => (InitSampler::Gaussian { mean: o.stat_mean.clone(), cov: o.stat_cov.clone() }, 0),
            None => (self.init(p)?, self.cfg.steps()?),
        };
        let d = p.spec.dim;
        let u = self.directions(d)?.last().expect("at least one direction").normalize();
        let stepper = Stepper::new(&p.spec, &p.noise, p.beta, p.variant, &self.options)?;
        let prepared = init.prepare()?;
        info!("trajectory: {replicas} replicas x {} steps", burn + n);
        let s = self.stream("trajectory");
        self.count("trajectory", replicas);
        let scale = 1.0 / (n as f64).sqrt();
        let values = map_replicas(replicas, s, |_, stream| {
            let mut chain = stepper.chain(prepared.sample(stream.split_named("init")), stream)?;
            chain.advance(burn)?;
            let mut sum = chain.theta().dot(&u);
            for _ in 1..n {
                sum += chain.step()?.dot(&u);
            }
            Ok(sum * scale)
        })?;
        let family = if matches!(p.noise, NoiseModel::AdditiveGaussian { .. }) { Family::SubGaussian } else { Family::SubExp };
        let (check, est) = check_trajectory_lipschitz(&values, &p.spec, &p.noise, p.beta, n, "n^-1/2 sum <u, theta_i>", family)?;
        self.push([check]);
        self.report.add_estimate(format!("trajectory functional, n = {n}"), est);
        Ok(())
    }

    fn pr_average(&mut self, p: &Problem, n0: usize, ns: &[usize], replicas: usize) -> Result<()> {
        let cfg = self.cfg;
        let oracle = p
            .oracle
            .as_ref()
            .ok_or_else(|| Error::Unsupported("tail-average checks need the closed-form stationary law".into()))?;
        let nu = match cfg.init.as_ref().map(|i| i.kind) {
            Some(InitKind::Point) | Some(InitKind::Gaussian) | Some(InitKind::Stationary) => match self.init(p)? {
                InitSampler::Point(m) => InitialLaw { cov: DMatrix::zeros(m.len(), m.len()), mean: m },
                InitSampler::Gaussian { mean, cov } => InitialLaw { mean, cov },
            },
            None => InitialLaw { mean: oracle.stat_mean.clone(), cov: &oracle.stat_cov * 0.5 },
        };
        let mut ns = ns.to_vec();
        ns.sort_unstable();
        ns.dedup();
        let nmax = *ns.last().ok_or_else(|| cfg.err("n", "must not be empty"))?;
        let d = p.spec.dim;
        let stepper = Stepper::new(&p.spec, &p.noise, p.beta, p.variant, &self.options)?;
        let prepared = InitSampler::Gaussian { mean: nu.mean.clone(), cov: nu.cov.clone() }.prepare()?;
        info!("pr_average: {replicas} replicas x {} steps", n0 + nmax);
        let s = self.stream("pr_average");
        self.count("pr_average", replicas);
        let per_replica = map_replicas(replicas, s, |_, stream| {
            let mut chain = stepper.chain(prepared.sample(stream.split_named("init")), stream)?;
            chain.advance(n0)?;
            let mut sum = DVector::<f64>::zeros(d);
            let mut out = Vec::with_capacity(ns.len() * d);
            let mut next = 0;
            for t in 1..=nmax {
                sum += chain.step()?;
                if t == ns[next] {
                    out.extend((&sum / t as f64).iter());
                    next += 1;
                }
            }
            Ok(out)
        })?;
        let samples: Vec<AverageSamples> = ns
            .iter()
            .enumerate()
            .map(|(k, &n)| AverageSamples {
                n,
                averages: DMatrix::from_fn(replicas, d, |r, j| per_replica[r][k * d + j]),
            })
            .collect();
        let checks = check_pr_average_bound(&samples, &p.spec, &p.noise, p.beta, n0, &cfg.deltas(), &nu, oracle)?;
        self.push(checks);
        let mut csv = String::from("n,replica");
        for j in 0..d {
            let _ = write!(csv, ",coord_{j}");
        }
        csv.push('\n');
        for s in &samples {
            for r in 0..replicas {
                let _ = write!(csv, "{},{r}", s.n);
                for j in 0..d {
                    let _ = write!(csv, ",{}", fmt_f64(s.averages[(r, j)]));
                }
                csv.push('\n');
            }
        }
        self.file("averages.csv", csv);
        Ok(())
    }

    fn minibatch(&mut self, spec: &ProblemSpec, noise: &NoiseModel, beta: f64) -> Result<()> {
        let cfg = self.cfg;
        let batch = cfg.require(cfg.batch, "N")?;
        let steps = cfg.steps()?;
        let n = cfg.n_replicas()?;
        let mb = cfg.minibatch.clone().unwrap_or_default();
        let radius = mb.radius.unwrap_or(1.0);
        let delta = mb.delta.unwrap_or(0.05);
        let certified = match noise {
            NoiseModel::RandomDesignGaussian { label_std } if spec.objective.has_linear_gradient() => Some(
                MatrixNoiseGenerator::GaussianDesign { design_cov: spec.sigma_matrix.clone(), label_std: *label_std }
                    .certified_constants(),
            ),
            NoiseModel::AdditiveGaussian { cov } if spec.objective.has_linear_gradient() => {
                Some((0.0, crate::diagnostics::dynamics::gaussian_psi2_constant(cov)))
            }
            _ => None,
        };
        let k_matrix = mb.k_xi_matrix.or(certified.map(|c| c.0)).ok_or(Error::MissingConstant("k_xi_matrix"))?;
        let k_vector = mb.k_xi_vector.or(certified.map(|c| c.1)).ok_or(Error::MissingConstant("k_xi_vector"))?;
        let mut variant = if mb.aggregated.unwrap_or(true) {
            ChainVariant::MinibatchAggregated { batch }
        } else {
            ChainVariant::Minibatch { batch }
        };
        let stepper = match Stepper::new(spec, noise, beta, variant, &self.options) {
            Err(Error::Unsupported(msg)) if matches!(variant, ChainVariant::MinibatchAggregated { .. }) => {
                self.report.note(format!("aggregated minibatch sampling unavailable ({msg}); drawing batches explicitly"));
                variant = ChainVariant::Minibatch { batch };
                Stepper::new(spec, noise, beta, variant, &self.options)?
            }
            other => other?,
        };
        let p = Problem { spec: spec.clone(), noise: noise.clone(), beta, variant, oracle: None };
        let prepared = self.init(&p)?.prepare()?;
        info!("minibatch_boundedness: {n} replicas x {steps} steps, N = {batch}");
        let s = self.stream("minibatch");
        self.count("minibatch", n);
        let theta_star = &spec.theta_star;
        let max_dists = map_replicas(n, s, |_, stream| {
            let mut chain = stepper.chain(prepared.sample(stream.split_named("init")), stream)?;
            let mut worst = (chain.theta() - theta_star).norm();
            for _ in 0..steps {
                worst = worst.max((chain.step()? - theta_star).norm());
            }
            Ok(worst)
        })?;
        let conditions = bounds::minibatch_conditions(spec, k_matrix, k_vector, radius, batch, beta, steps, delta);
        let check = check_minibatch_boundedness(&max_dists, radius, delta, &conditions)?;
        self.push([check]);
        let mut csv = String::from("replica,max_dist\n");
        for (r, m) in max_dists.iter().enumerate() {
            let _ = writeln!(csv, "{r},{}", fmt_f64(*m));
        }
        self.file("minibatch_max.csv", csv);
        Ok(())
    }

    fn matrix(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let m = cfg.matrix.as_ref().ok_or_else(|| cfg.err("matrix", "missing [matrix] table"))?;
        let generator = cfg.matrix_generator(m)?;
        let (ck, cv) = generator.certified_constants();
        let k_matrix = m.k_matrix.unwrap_or(ck);
        let k_vector = m.k_vector.unwrap_or(cv);
        info!("matrix_concentration: {} trials per batch size", m.trials);
        let s = self.stream("matrix");
        self.count("matrix", m.trials);
        let checks = check_matrix_concentration(&generator, k_matrix, k_vector, &m.n_grid, m.delta, m.trials, s)?;
        self.push(checks);
        Ok(())
    }

    fn properties(&mut self, p: &Problem) -> Result<()> {
        let suite = self.cfg.suite.clone().unwrap_or_default();
        let instances = suite.property_instances.unwrap_or(SUITE_PROPERTY_INSTANCES);
        let s = self.stream("geometric_sum");
        let geo = check_geometric_sum(instances, s)?;
        let tri = check_trinomial(suite.trinomial_p.unwrap_or(SUITE_TRINOMIAL_P))?;
        self.push([geo, tri]);
        let s = self.stream("gradient_step");
        match check_gradient_step(&p.spec, p.beta, instances, s) {
            Ok(c) => self.push([c]),
            Err(e @ Error::InadmissibleStepSize { .. }) => self.report.note(format!("gradient-step contraction skipped: {e}")),
            Err(e) => {
                self.optional("gradient-step contraction", Err::<(), _>(e))?;
            }
        }
        Ok(())
    }

    fn full_suite(&mut self, spec: ProblemSpec, noise: NoiseModel) -> Result<()> {
        let cfg = self.cfg;
        let beta = cfg.beta()?;
        let steps = cfg.steps()?;
        let n = cfg.n_replicas()?;
        let suite = cfg.suite.clone().unwrap_or_default();
        let p = Problem::new(spec, noise, beta, cfg.chain_variant());
        let stationary = self.stationary(&p, steps, true)?;
        let coupling_steps = suite.coupling_steps.unwrap_or(SUITE_COUPLING_STEPS);
        let pairs = suite.coupling_pairs.unwrap_or(n.min(SUITE_COUPLING_PAIRS));
        self.coupling(&p, coupling_steps, Some(pairs))?;
        if p.spec.dim == 1 {
            let r = self.tv_decay(&p);
            self.optional("TV decay", r)?;
        }
        self.last_iterate(&p, Some(stationary))?;
        let r = self.covariance(&p, suite.covariance_lags.unwrap_or(SUITE_LAGS));
        self.optional("covariance decay", r)?;
        let r = self.trajectory(
            &p,
            suite.trajectory_n.unwrap_or(SUITE_TRAJECTORY_N),
            suite.trajectory_replicas.unwrap_or(SUITE_TRAJECTORY_REPLICAS),
        );
        self.optional("trajectory concentration", r)?;
        let ns = cfg.n.clone().unwrap_or_else(|| SUITE_AVERAGE_N.to_vec());
        let r = self.pr_average(
            &p,
            cfg.n0.unwrap_or(SUITE_N0),
            &ns,
            suite.average_replicas.unwrap_or(n.min(SUITE_AVERAGE_REPLICAS)),
        );
        self.optional("tail average", r)?;
        if cfg.batch.is_some() {
            let r = self.minibatch(&p.spec, &p.noise, beta);
            self.optional("minibatch boundedness", r)?;
        }
        if cfg.matrix.is_some() {
            self.matrix()?;
        }
        self.properties(&p)
    }
}

fn tv_csv(times: &[usize], analytic: Option<&TvCurve>, empirical: Option<&TvCurve>) -> String {
    let mut csv = String::from("time,tv_analytic,tv_empirical\n");
    let cell = |c: Option<&TvCurve>, i: usize| c.map(|c| fmt_f64(c.tv[i])).unwrap_or_default();
    for (i, t) in times.iter().enumerate() {
        let _ = writeln!(csv, "{t},{},{}", cell(analytic, i), cell(empirical, i));
    }
    if let Some(floor) = empirical.and_then(|e| e.noise_floor) {
        let _ = writeln!(csv, "# noise_floor,{}", fmt_f64(floor));
    }
    csv
}

/// Runs the configured experiment. The report carries no timestamp; the
/// caller stamps it when writing.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let master = RngStream::new(cfg.master_seed);
    let mut runner = Runner {
        cfg,
        master,
        options: RunOptions { force_step_size: cfg.force_step_size, record_draws: false },
        report: DiagnosticsReport::new(cfg.kind.name(), cfg.master_seed),
        files: Vec::new(),
        fitted_rho: None,
    };
    if cfg.kind == ExperimentKind::MatrixConcentration {
        runner.matrix()?;
        return Ok(ExperimentOutput { report: runner.report, files: runner.files });
    }
    let (spec, noise) = cfg.build_problem(master)?;
    runner.report.spec = Some(SpecSummary::new(&spec, &noise));
    runner.report.beta = cfg.beta;
    if let Some(grid) = &cfg.beta_grid {
        runner.report.beta_grid = grid.clone();
        runner.stationary_grid(&spec, &noise, grid)?;
        return Ok(ExperimentOutput { report: runner.report, files: runner.files });
    }
    let beta = cfg.beta()?;
    if !cfg.force_step_size && cfg.kind != ExperimentKind::MinibatchBoundedness {
        // Fail before any simulation, naming the violated condition.
        Stepper::new(&spec, &noise, beta, cfg.chain_variant(), &runner.options)?;
    }
    let variant = cfg.chain_variant();
    match cfg.kind {
        ExperimentKind::Stationary => {
            let p = Problem::new(spec, noise, beta, variant);
            runner.stationary(&p, cfg.steps()?, true)?;
        }
        ExperimentKind::TvDecay => {
            let p = Problem::new(spec, noise, beta, variant);
            runner.tv_decay(&p)?;
        }
        ExperimentKind::Coupling => {
            let p = Problem::new(spec, noise, beta, variant);
            runner.coupling(&p, cfg.steps()?, None)?;
        }
        ExperimentKind::LastIterate => {
            let p = Problem::new(spec, noise, beta, variant);
            runner.last_iterate(&p, None)?;
        }
        ExperimentKind::PrAverage => {
            let p = Problem::new(spec, noise, beta, variant);
            let n = cfg.n.clone().unwrap_or_default();
            runner.pr_average(&p, cfg.require(cfg.n0, "n0")?, &n, cfg.n_replicas()?)?;
        }
        ExperimentKind::MinibatchBoundedness => runner.minibatch(&spec, &noise, beta)?,
        ExperimentKind::FullSuite => runner.full_suite(spec, noise)?,
        ExperimentKind::MatrixConcentration => unreachable!("handled above"),
    }
    Ok(ExperimentOutput { report: runner.report, files: runner.files })
}

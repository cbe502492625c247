use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::{spec_id, ChainVariant, RunOptions, Stepper};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{NoiseModel, ProblemSpec};
use crate::rng::RngStream;

/// Law of the initial iterate.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSampler {
    Point(DVector<f64>),
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl InitSampler {
    pub fn dim(&self) -> usize {
        match self {
            InitSampler::Point(p) => p.len(),
            InitSampler::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            InitSampler::Point(p) => format!("point {:?}", p.as_slice()),
            InitSampler::Gaussian { mean, cov } => {
                format!("gaussian mean {:?} cov {:?}", mean.as_slice(), cov.as_slice())
            }
        }
    }

    pub fn prepare(&self) -> Result<PreparedInit> {
        Ok(match self {
            InitSampler::Point(p) => PreparedInit { mean: p.clone(), factor: None },
            InitSampler::Gaussian { mean, cov } => {
                if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
                    return Err(Error::DimensionMismatch { expected: mean.len(), got: cov.nrows() });
                }
                PreparedInit { mean: mean.clone(), factor: Some(linalg::psd_sqrt(cov)?) }
            }
        })
    }
}

/// An [`InitSampler`] with its covariance factor computed.
#[derive(Debug, Clone)]
pub struct PreparedInit {
    mean: DVector<f64>,
    factor: Option<DMatrix<f64>>,
}

impl PreparedInit {
    pub fn sample(&self, stream: RngStream) -> DVector<f64> {
        match &self.factor {
            None => self.mean.clone(),
            Some(f) => {
                let mut rng = stream.rng();
                let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.mean + f * z
            }
        }
    }
}

/// Stream of replica `r`: `master.split(r)`. Its initial point is drawn from
/// the "init" substream and its chain noise from the stream itself.
pub fn replica_stream(master: RngStream, replica: usize) -> RngStream {
    master.split(replica as u64)
}

/// Evaluates `f` for every replica index, possibly in parallel, returning
/// results in replica order. The first failing replica (by index) is
/// reported with its index.
pub fn map_replicas<T, F>(n_replicas: usize, master: RngStream, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, RngStream) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = (0..n_replicas)
        .into_par_iter()
        .map(|r| f(r, replica_stream(master, r)))
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(replica, res)| res.map_err(|e| Error::Replica { replica, source: Box::new(e) }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub spec_id: String,
    pub beta: f64,
    pub n_replicas: usize,
    pub snapshot_times: Vec<usize>,
    /// One n_replicas × d matrix per snapshot time.
    pub snapshots: Vec<DMatrix<f64>>,
    pub seeds: Vec<RngStream>,
    pub master_seed: RngStream,
}

impl Ensemble {
    pub fn snapshot_at(&self, time: usize) -> Option<&DMatrix<f64>> {
        self.snapshot_times.iter().position(|&t| t == time).map(|i| &self.snapshots[i])
    }

    pub fn last_snapshot(&self) -> &DMatrix<f64> {
        self.snapshots.last().expect("at least one snapshot time")
    }
}

pub fn check_snapshot_times(times: &[usize], n_steps: usize) -> Result<()> {
    if times.is_empty() {
        return Err(Error::arg("snapshot_times", "must not be empty"));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("snapshot_times", "must be strictly increasing"));
    }
    if times.last().copied().unwrap_or(0) > n_steps {
        return Err(Error::arg("snapshot_times", "must not exceed T"));
    }
    Ok(())
}

/// Runs `n_replicas` independent chains and records them at
/// `snapshot_times`.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    spec: &ProblemSpec,
    noise: &NoiseModel,
    beta: f64,
    variant: ChainVariant,
    init: &InitSampler,
    n_steps: usize,
    snapshot_times: &[usize],
    n_replicas: usize,
    master: RngStream,
    options: &RunOptions,
) -> Result<Ensemble> {
    check_snapshot_times(snapshot_times, n_steps)?;
    if n_replicas == 0 {
        return Err(Error::arg("n_replicas", "must be positive"));
    }
    if init.dim() != spec.dim {
        return Err(Error::DimensionMismatch { expected: spec.dim, got: init.dim() });
    }
    let stepper = Stepper::new(spec, noise, beta, variant, options)?;
    let prepared = init.prepare()?;
    let d = spec.dim;
    let per_replica = map_replicas(n_replicas, master, |_, stream| {
        let theta0 = prepared.sample(stream.split_named("init"));
        let mut chain = stepper.chain(theta0, stream)?;
        let mut out = Vec::with_capacity(snapshot_times.len() * d);
        for &t in snapshot_times {
            chain.advance(t - chain.time())?;
            out.extend(chain.theta().iter());
        }
        Ok(out)
    })?;
    let snapshots = (0..snapshot_times.len())
        .map(|k| DMatrix::from_fn(n_replicas, d, |r, j| per_replica[r][k * d + j]))
        .collect();
    Ok(Ensemble {
        spec_id: spec_id(spec),
        beta,
        n_replicas,
        snapshot_times: snapshot_times.to_vec(),
        snapshots,
        seeds: (0..n_replicas).map(|r| replica_stream(master, r)).collect(),
        master_seed: master,
    })
}

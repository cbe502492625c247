use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::chain::{ChainVariant, RunOptions, Stepper};
use super::ensemble::{map_replicas, replica_stream, InitSampler};
use crate::error::{Error, Result};
use crate::model::{NoiseModel, ProblemSpec};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRun {
    pub beta: f64,
    pub n_pairs: usize,
    pub n_steps: usize,
    /// (n_steps + 1) × n_pairs; row t holds ‖θ_t − θ′_t‖² for each pair.
    pub sq_dists: DMatrix<f64>,
    pub init_description: String,
    pub seeds: Vec<RngStream>,
}

impl CouplingRun {
    pub fn mean_sq_dist(&self, step: usize) -> f64 {
        self.sq_dists.row(step).mean()
    }
}

/// Runs `n_pairs` synchronously coupled chain pairs: both chains of a pair
/// consume the same noise realization at every step. When both initial laws
/// are identical the two chains also share their initial draw.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled_pair(
    spec: &ProblemSpec,
    noise: &NoiseModel,
    beta: f64,
    variant: ChainVariant,
    init1: &InitSampler,
    init2: &InitSampler,
    n_steps: usize,
    n_pairs: usize,
    master: RngStream,
    options: &RunOptions,
) -> Result<CouplingRun> {
    if n_pairs == 0 {
        return Err(Error::arg("n_pairs", "must be positive"));
    }
    for init in [init1, init2] {
        if init.dim() != spec.dim {
            return Err(Error::DimensionMismatch { expected: spec.dim, got: init.dim() });
        }
    }
    let stepper = Stepper::new(spec, noise, beta, variant, options)?;
    let p1 = init1.prepare()?;
    let p2 = init2.prepare()?;
    let same_init = init1 == init2;
    let columns = map_replicas(n_pairs, master, |_, stream| {
        let a = p1.sample(stream.split_named("init1"));
        let b = if same_init { a.clone() } else { p2.sample(stream.split_named("init2")) };
        stepper.check_start(&a)?;
        stepper.check_start(&b)?;
        let mut thetas = [a, b];
        let mut rng = stream.rng();
        let mut buf = stepper.buffers(2);
        let mut out = Vec::with_capacity(n_steps + 1);
        out.push((&thetas[0] - &thetas[1]).norm_squared());
        for t in 1..=n_steps {
            stepper.step_many(&mut thetas, &mut rng, &mut buf);
            stepper.guard(t, &thetas[0])?;
            stepper.guard(t, &thetas[1])?;
            out.push((&thetas[0] - &thetas[1]).norm_squared());
        }
        Ok(out)
    })?;
    let sq_dists = DMatrix::from_fn(n_steps + 1, n_pairs, |t, p| columns[p][t]);
    Ok(CouplingRun {
        beta,
        n_pairs,
        n_steps,
        sq_dists,
        init_description: format!("init1: {}; init2: {}", init1.describe(), init2.describe()),
        seeds: (0..n_pairs).map(|r| replica_stream(master, r)).collect(),
    })
}

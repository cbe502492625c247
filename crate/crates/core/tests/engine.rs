mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};

use common::*;
use sgdchain::engine::io::{read_coupling_csv, read_ensemble_csv, write_coupling_csv, write_ensemble_csv};
use sgdchain::engine::{
    run_chain, run_coupled_pair, run_ensemble, run_minibatch_chain, run_projected_chain, run_variant, ChainVariant,
    InitSampler, RunOptions,
};
use sgdchain::model::{NoiseModel, ProblemSpec, DESIGN_CONSTANT_DRAWS};
use sgdchain::{Error, RngStream};

fn point(x: f64) -> InitSampler {
    InitSampler::Point(DVector::from_element(1, x))
}

fn noiseless() -> (ProblemSpec, NoiseModel) {
    (ProblemSpec::scalar_quadratic(0.0, 1.0).unwrap(), NoiseModel::isotropic_gaussian(1, 0.0))
}

#[test]
fn noiseless_chain_decays_geometrically() {
    let (spec, noise) = noiseless();
    let tr = run_chain(&spec, &noise, 0.1, &DVector::from_element(1, 1.0), 60, RngStream::new(1), &RunOptions::default())
        .unwrap();
    assert_eq!(tr.len(), 61);
    for (i, &t) in tr.times.iter().enumerate() {
        assert_relative_eq!(tr.iterates[(0, i)], 0.9f64.powi(t as i32), max_relative = 1e-12);
    }
}

#[test]
fn zero_step_size_keeps_start() {
    let (spec, noise) = reference_problem();
    let theta0 = DVector::from_element(1, 0.7);
    let tr = run_chain(&spec, &noise, 0.0, &theta0, 25, RngStream::new(2), &RunOptions::default()).unwrap();
    assert!(tr.iterates.iter().all(|&x| x == 0.7));
}

#[test]
fn iterate_moves_by_beta_times_recorded_draw() {
    let ls = ProblemSpec::least_squares(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    let noise = NoiseModel::RandomDesignGaussian { label_std: 0.3 };
    let spec = noise.apply_constants(&ls, 20_000, RngStream::new(0)).unwrap();
    let opts = RunOptions { record_draws: true, ..Default::default() };
    let beta = 0.05;
    let tr = run_chain(&spec, &noise, beta, &DVector::from_vec(vec![1.0, -1.0]), 100, RngStream::new(3), &opts).unwrap();
    let draws = tr.draws.as_ref().expect("draws recorded");
    for t in 0..100 {
        let step = (tr.iterate(t + 1) - tr.iterate(t)).norm();
        assert!(step <= beta * draws.column(t).norm() * (1.0 + 1e-12) + 1e-15);
    }
}

#[test]
fn inadmissible_step_size_is_rejected_unless_forced() {
    let (spec, noise) = reference_problem();
    let theta0 = DVector::zeros(1);
    let err = run_chain(&spec, &noise, 2.5, &theta0, 10, RngStream::new(0), &RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::InadmissibleStepSize { .. }), "{err}");
    assert!(err.to_string().contains("ergodicity"));
    // Forced, the chain diverges and the guard stops it.
    let err = run_chain(&spec, &noise, 2.5, &DVector::from_element(1, 1.0), 200, RngStream::new(0), &RunOptions::forced())
        .unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn projection_with_huge_radius_is_inactive() {
    let (mut spec, noise) = reference_problem();
    let theta0 = DVector::from_element(1, 2.0);
    let plain = run_chain(&spec, &noise, 0.1, &theta0, 200, RngStream::new(4), &RunOptions::default()).unwrap();
    spec.ball_radius = Some(1e9);
    let proj = run_projected_chain(&spec, &noise, 0.1, &theta0, 200, RngStream::new(4), &RunOptions::default()).unwrap();
    assert_eq!(plain.iterates, proj.iterates);
}

#[test]
fn projected_logistic_chain_stays_in_ball() {
    let spec = ProblemSpec::logistic_ball(DVector::from_vec(vec![0.3, -0.2]), DMatrix::identity(2, 2), 0.5, None).unwrap();
    let noise = NoiseModel::RandomDesignGaussian { label_std: 0.0 };
    let spec = noise.apply_constants(&spec, 20_000, RngStream::new(1)).unwrap();
    let tr = run_projected_chain(&spec, &noise, 0.5, &DVector::zeros(2), 2000, RngStream::new(5), &RunOptions::forced())
        .unwrap();
    for i in 0..tr.len() {
        assert!(tr.iterate(i).norm() <= 0.5 * (1.0 + 1e-12));
    }
}

#[test]
fn plain_chain_refuses_logistic_objective() {
    let spec = ProblemSpec::logistic_ball(DVector::zeros(1), DMatrix::identity(1, 1), 1.0, None).unwrap();
    let noise = NoiseModel::RandomDesignGaussian { label_std: 0.0 };
    let r = run_chain(&spec, &noise, 0.1, &DVector::zeros(1), 5, RngStream::new(0), &RunOptions::forced());
    assert!(r.is_err());
}

#[test]
fn batch_of_one_equals_plain_chain() {
    let ls = ProblemSpec::least_squares(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    let noise = NoiseModel::RandomDesignGaussian { label_std: 0.5 };
    let spec = noise.apply_constants(&ls, 20_000, RngStream::new(0)).unwrap();
    let theta0 = DVector::from_vec(vec![1.0, 1.0]);
    let plain = run_chain(&spec, &noise, 0.05, &theta0, 300, RngStream::new(6), &RunOptions::default()).unwrap();
    let mb = run_minibatch_chain(&spec, &noise, 0.05, 1, &theta0, 300, RngStream::new(6), &RunOptions::default()).unwrap();
    assert_eq!(plain.iterates, mb.iterates);
}

fn one_step_variance(batch: usize, aggregated: bool) -> f64 {
    let (spec, noise) = reference_problem();
    let variant = if aggregated {
        ChainVariant::MinibatchAggregated { batch }
    } else {
        ChainVariant::Minibatch { batch }
    };
    let ens =
        run_ensemble(&spec, &noise, 0.5, variant, &point(1.0), 1, &[1], 40_000, RngStream::new(8), &RunOptions::default())
            .unwrap();
    sample_variance(&ens.last_snapshot().column(0).iter().copied().collect::<Vec<_>>())
}

#[test]
fn minibatch_noise_variance_scales_inversely_with_batch() {
    for aggregated in [false, true] {
        let (v4, v8) = (one_step_variance(4, aggregated), one_step_variance(8, aggregated));
        assert_relative_eq!(v4 / v8, 2.0, max_relative = 0.1);
        // One step from θ = 1: Var = β²σ²/N.
        assert_relative_eq!(v4, 0.25 / 4.0, max_relative = 0.05);
    }
}

#[test]
fn ensemble_replicas_reproduce_from_their_seeds() {
    let (spec, noise) = reference_problem();
    let ens =
        run_ensemble(&spec, &noise, 0.1, ChainVariant::Plain, &point(1.0), 40, &[10, 40], 8, RngStream::new(9), &RunOptions::default())
            .unwrap();
    assert_eq!(ens.snapshot_times, vec![10, 40]);
    for r in 0..8 {
        let tr = run_variant(&spec, &noise, 0.1, ChainVariant::Plain, &DVector::from_element(1, 1.0), 40, ens.seeds[r], &RunOptions::default())
            .unwrap();
        assert_eq!(tr.iterate(10)[0], ens.snapshots[0][(r, 0)]);
        assert_eq!(tr.last()[0], ens.snapshots[1][(r, 0)]);
    }
    let again =
        run_ensemble(&spec, &noise, 0.1, ChainVariant::Plain, &point(1.0), 40, &[10, 40], 8, RngStream::new(9), &RunOptions::default())
            .unwrap();
    assert_eq!(ens, again);
}

#[test]
fn snapshot_times_must_increase() {
    let (spec, noise) = reference_problem();
    for times in [vec![5, 5], vec![6, 3], vec![11]] {
        let r = run_ensemble(&spec, &noise, 0.1, ChainVariant::Plain, &point(0.0), 10, &times, 2, RngStream::new(0), &RunOptions::default());
        assert!(r.is_err(), "{times:?}");
    }
}

#[test]
fn stationary_mean_is_optimum() {
    let noise = NoiseModel::isotropic_gaussian(1, 1.0);
    let spec = noise
        .apply_constants(&ProblemSpec::scalar_quadratic(2.0, 1.0).unwrap(), DESIGN_CONSTANT_DRAWS, RngStream::new(0))
        .unwrap();
    let ens =
        run_ensemble(&spec, &noise, 0.1, ChainVariant::Plain, &point(0.0), 300, &[300], 50_000, RngStream::new(10), &RunOptions::default())
            .unwrap();
    let xs: Vec<f64> = ens.last_snapshot().column(0).iter().copied().collect();
    assert!((mean(&xs) - 2.0).abs() <= 4.0 * std_error(&xs));
}

#[test]
fn identical_coupled_starts_never_separate() {
    let ls = ProblemSpec::least_squares(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
    let noise = NoiseModel::RandomDesignGaussian { label_std: 0.5 };
    let spec = noise.apply_constants(&ls, 20_000, RngStream::new(0)).unwrap();
    let init = InitSampler::Gaussian { mean: DVector::zeros(2), cov: DMatrix::identity(2, 2) };
    let run = run_coupled_pair(&spec, &noise, 0.05, ChainVariant::Plain, &init, &init, 30, 50, RngStream::new(1), &RunOptions::default())
        .unwrap();
    assert!(run.sq_dists.iter().all(|&d| d == 0.0));
}

#[test]
fn noiseless_coupling_contracts_exactly() {
    let (spec, noise) = noiseless();
    let run = run_coupled_pair(&spec, &noise, 0.1, ChainVariant::Plain, &point(1.0), &point(-1.0), 40, 3, RngStream::new(2), &RunOptions::default())
        .unwrap();
    for t in 0..=40 {
        for p in 0..3 {
            assert_relative_eq!(run.sq_dists[(t, p)], 4.0 * 0.81f64.powi(t as i32), max_relative = 1e-11);
        }
    }
}

#[test]
fn coupling_columns_reproduce_from_their_seeds() {
    let (spec, noise) = reference_problem();
    let a = run_coupled_pair(&spec, &noise, 0.1, ChainVariant::Plain, &point(1.0), &point(-1.0), 10, 6, RngStream::new(3), &RunOptions::default())
        .unwrap();
    let b = run_coupled_pair(&spec, &noise, 0.1, ChainVariant::Plain, &point(1.0), &point(-1.0), 10, 6, RngStream::new(3), &RunOptions::default())
        .unwrap();
    assert_eq!(a, b);
    assert!(a.sq_dists.iter().all(|&d| d >= 0.0));
}

#[test]
fn csv_round_trip_is_exact() {
    let (spec, noise) = reference_problem();
    let ens =
        run_ensemble(&spec, &noise, 0.1, ChainVariant::Plain, &point(1.0), 20, &[5, 20], 7, RngStream::new(4), &RunOptions::default())
            .unwrap();
    let mut buf = Vec::new();
    write_ensemble_csv(&ens, &mut buf).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("replica,time,coord_0"));
    let table = read_ensemble_csv(buf.as_slice()).unwrap();
    assert_eq!(table.snapshot_times, ens.snapshot_times);
    assert_eq!(table.snapshots, ens.snapshots);

    let run = run_coupled_pair(&spec, &noise, 0.1, ChainVariant::Plain, &point(1.0), &point(0.0), 5, 4, RngStream::new(5), &RunOptions::default())
        .unwrap();
    let mut buf = Vec::new();
    write_coupling_csv(&run, &mut buf).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("pair,step,sq_dist"));
    assert_eq!(read_coupling_csv(buf.as_slice()).unwrap(), run.sq_dists);
}

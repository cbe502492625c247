//! The SGD chain in its plain, projected and minibatch forms, replica
//! ensembles and synchronously coupled pairs.

mod chain;
mod coupling;
mod ensemble;
pub mod io;

pub use chain::{
    batch_averaged, project_onto_ball, run_chain, run_minibatch_chain, run_projected_chain, run_variant, spec_id, Chain,
    ChainVariant, RunOptions, StepBuffers, Stepper, Trajectory, DIVERGENCE_THRESHOLD, MAX_STORED_ENTRIES,
};
pub use coupling::{run_coupled_pair, CouplingRun};
pub use ensemble::{
    check_snapshot_times, map_replicas, replica_stream, run_ensemble, Ensemble, InitSampler, PreparedInit,
};

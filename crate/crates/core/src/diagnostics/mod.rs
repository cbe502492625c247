//! Estimators for the quantities the theory bounds, and checks that compare
//! each estimate with its bound under an explicit Monte Carlo allowance
//! (three standard errors unless stated otherwise).

pub mod bounds;
pub mod combinatorics;
pub mod concentration;
pub mod deviation;
pub mod dynamics;
pub mod properties;
pub mod report;
pub mod stationary;
pub mod stats;

pub use combinatorics::{geometric_sum_bound, geometric_sum_direct, trinomial_identity};
pub use concentration::{
    certify_noise_constants, estimate_moments, estimate_psi1, estimate_psi1_tilde, estimate_psi2,
    estimate_psi2_tilde, ConcentrationEstimate, Family, Method, Moments,
};
pub use deviation::{
    check_last_iterate_deviation, check_matrix_concentration, check_minibatch_boundedness, check_pr_average_bound,
    AverageSamples, InitialLaw, MatrixNoiseGenerator, RemainderMode,
};
pub use dynamics::{
    analytic_tv_curve, check_coupling_contraction, check_covariance_decay, check_trajectory_lipschitz,
    check_tv_decay, empirical_tv_curve, exact_coupling_ratio, TvCurve,
};
pub use properties::{check_geometric_sum, check_gradient_step, check_trinomial};
pub use report::{BoundCheck, CheckPoint, DiagnosticsReport, Relation, ScalingFit, SpecSummary, CLAIMS};
pub use stationary::{
    attest_burn_in, check_concentration_transfer, check_drift_condition, check_finite_moments,
    check_oracle_stationary, check_sqrt_beta_scaling, check_variance_bias_bounds, BurnIn,
};

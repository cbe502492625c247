//! Problem instances, gradient-noise models and step-size admissibility.

mod noise;
mod spec;
pub mod step_size;

pub use noise::{
    sample_gradient, sample_gradients, GradientSampler, NoiseConstants, NoiseKind, NoiseModel, Zeta,
    DESIGN_CONSTANT_DRAWS,
};
pub use spec::{
    gradient, logistic_curvature_bounds, logistic_hessian, ConstantProvenance, ConstantSource, ObjectiveKind,
    ProblemSpec, LOGISTIC_QUADRATURE_ORDER,
};
pub use step_size::{validate_step_size, ConditionEntry, FiniteMomentsCondition, StepSizeReport};

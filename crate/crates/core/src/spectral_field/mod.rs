//! Characteristic functions on a k-grid: collision operators, transport
//! semigroup, time evolution and the self-similar profile solver.

mod evolve;
mod grid;
mod operators;
mod profile;

pub use evolve::{evolve, evolve_linear_bound, Evolver, Stepper};
pub use grid::{eval_interp, CharFnGrid, GridGeometry};
pub use operators::{
    gamma_apply, gamma_apply_with, gamma_pointwise, l_apply, l_apply_with, semigroup_apply,
    transport_base, CollisionRule,
};
pub use profile::{
    contraction_factor, contraction_from, fit_decay_rate, fixed_point_profile, fp_distance,
    hessian_at_origin, stability_distance, stability_experiment, tangency_defect, GridGeometryDesc,
    ProfileOptions, ProfileResult, StabilityReport, StationaryOperator,
};

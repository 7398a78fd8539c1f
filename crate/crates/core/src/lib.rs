//! Self-similar solutions of the Boltzmann equation for Maxwell molecules
//! with a linear deformation term, computed in Fourier variables.
//!
//! - [`kernel_quadrature`]: collision kernels, sphere rules, q and λ(p).
//! - [`second_moments`]: second-moment generator, eigenpair (β, N), B(t), λ².
//! - [`spectral_field`]: grids of characteristic functions, Γ, L, E(t),
//!   time evolution and the profile fixed point.
//! - [`moment_hierarchy`]: moment polynomials Q_ℓ and compatible densities.
//! - [`dsmc_oracle`]: stochastic particle simulation of the same equation.

pub mod dsmc_oracle;
pub mod error;
pub mod kernel_quadrature;
pub mod linalg;
pub mod moment_hierarchy;
pub mod second_moments;
pub mod spectral_field;

pub use error::{Error, Result};
pub use kernel_quadrature::{
    build_quadrature, lambda_p, normalize_kernel, q_coefficient, KernelProfile, KernelSpec,
    SphereQuadrature,
};
pub use linalg::{DeformationMatrix, SymMatrix, Vec3};
pub use num_complex::Complex64;
pub use second_moments::{
    dominant_eigenpair, evolve_b, extract_lambda_scale, EigenPair, MomentTrajectory,
};
pub use spectral_field::{CharFnGrid, GridGeometry};

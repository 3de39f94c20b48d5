//! Exact reference values: heat kernels, quadrature grids and spectral
//! families on the model spaces.

pub mod grid;
pub mod heat_kernel;
pub mod spectral;

pub use grid::{lp_norm, quadrature_grid, GridSpec, QuadratureGrid};
pub use heat_kernel::{heat_kernel, kernel_at_distance, KernelEval};
pub use spectral::{SphericalExpansion, SphericalMode, TrigMode, TrigPolynomial};

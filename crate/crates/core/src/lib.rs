//! Monte Carlo heat-semigroup engine on model Riemannian manifolds.
//!
//! Brownian motion here has generator `Δ_LB = -Δ`, where `Δ` is the
//! nonnegative Laplacian, so `P_t = e^{-tΔ}` and anti-development
//! increments have variance `2h` per coordinate.

pub mod error;
pub mod geometry;
pub mod mc;
pub mod oracle;
pub mod quad;
pub mod rng;
pub mod semigroup;
pub mod verify;
pub mod transport;

pub use error::{Error, Result};

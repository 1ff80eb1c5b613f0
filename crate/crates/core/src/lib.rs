//! Multi-species nonlocal interaction systems
//!
//! ```text
//! ∂ₜμᵢ = div[ mᵢ μᵢ ∇( Σⱼ Wᵢⱼ ⋆ μⱼ ) ],   i = 1..n
//! ```
//!
//! The crate evolves such systems in two exact-in-structure representations:
//!
//! - [`quantile_solver`]: in one space dimension every species is stored by its
//!   pseudo-inverse distribution function uᵢ on a shared midpoint grid of
//!   `[0, 1)`; the PDE becomes an ODE without spatial derivatives.
//! - [`particle_solver`]: atomic data in ℝᵈ evolves by the finite particle ODE,
//!   which is the exact solution for sums of Dirac masses.
//!
//! Around the solvers sit the analysis tools: [`convexity`] computes the
//! geodesic-convexity modulus λ₀ of the interaction energy with respect to the
//! compound Wasserstein metric, the confinement modulus λ̃₀ and irreducibility
//! verdicts; [`diagnostics`] measures energy, dissipation, support, decay rates
//! and steady states; [`verify`] bundles these into a pass/fail battery.

#![forbid(unsafe_code)]

pub mod config;
pub mod convexity;
pub mod diagnostics;
mod error;
pub mod measures;
pub mod particle_solver;
pub mod potentials;
pub mod quantile_solver;
pub mod verify;

pub use config::ExperimentConfig;
pub use convexity::{ConvexityReport, SystemParams};
pub use error::{ConfigIssue, Error, Result};
pub use measures::{ParticleState, QuantileState};
pub use potentials::{PotentialMatrix, ScalarPotential};
pub use quantile_solver::{Repair, Scheme, SolverConfig, Trajectory};

/// Row-major nested matrix as it appears in configuration files.
pub type Matrix = Vec<Vec<f64>>;

pub(crate) fn is_square(m: &Matrix, n: usize) -> bool {
    m.len() == n && m.iter().all(|row| row.len() == n)
}

pub(crate) fn is_symmetric(m: &Matrix) -> bool {
    let n = m.len();
    (0..n).all(|i| (0..i).all(|j| m[i][j] == m[j][i]))
}

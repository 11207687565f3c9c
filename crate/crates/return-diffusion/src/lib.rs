//! Numerical laboratory for diffusions with measure-valued (nonlocal)
//! Dirichlet boundary conditions on exterior domains.
//!
//! The boundary condition ties each boundary value to an interior average,
//! `u(z) = ∫ u dμ(z)`; probabilistically, a particle hitting the boundary at
//! `z` returns instantly to an interior point drawn from `μ(z, ·)`. The crate
//! builds the discrete machinery around that process:
//!
//! - [`grid`]: exterior domains, truncations Ω_n = Ω ∩ B_{n+1}(0), grids,
//! - [`operator`]: diffusion/drift coefficient fields and ellipticity checks,
//! - [`measure`]: boundary measures, their quadrature rows and truncations,
//! - [`resolvent`]: the discrete operator, resolvent solves, and the monotone
//!   exhaustion n → ∞,
//! - [`semigroup`]: positivity-preserving implicit-Euler evolution and the
//!   semigroup/Markov diagnostics,
//! - [`lyapunov`] and [`invariant`]: Lyapunov criteria, invariant measures by
//!   Abel means, adjoint fixed points, and total-variation convergence,
//! - [`montecarlo`]: an independent stochastic oracle simulating the
//!   jump-return diffusion,
//! - [`config`], [`report`], [`verify`]: the CLI harness surface.

pub mod config;
pub mod error;
pub mod expr;
pub mod grid;
pub mod invariant;
pub mod linalg;
pub mod lyapunov;
pub mod measure;
pub mod montecarlo;
pub mod operator;
pub mod report;
pub mod resolvent;
pub mod semigroup;
pub mod verify;

pub use error::Error;

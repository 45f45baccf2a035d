//! Simulation laboratory for Ornstein-Uhlenbeck processes driven by
//! compound Poisson jump noise on diagonal Galerkin truncations.
//!
//! The state space is `R^n` with coordinates in a fixed eigenbasis. The
//! process is the mild solution
//!
//! ```text
//! X_t^x = T_t x + sum_{tau_i <= t} T_{t - tau_i} sigma xi_i
//! ```
//!
//! where the jumps `xi_i` are drawn from `nu_0 = rho_0 mu` for a Gaussian
//! reference measure `mu`. The crate covers the change-of-measure
//! densities, both coupling constructions, and total-variation estimators
//! and bound curves.
//!
//! All numerical types are generic over [`Scalar`] (`f32` or `f64`);
//! Monte Carlo summaries are always `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod error;
pub mod levy;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod testfn;
pub mod tvlab;

pub use error::{Error, Result};
pub use levy::{JumpPath, LevySpec, Mass, Rho0};
pub use model::{DiagonalModel, NormKind, Vector};
pub use rng::{ReplicaRng, SeedStream};
pub use scalar::Scalar;
pub use stats::Estimate;
pub use testfn::BoundedFn;

pub type VectorF64 = Vector<f64>;
pub type VectorF32 = Vector<f32>;
pub type DiagonalModelF64 = DiagonalModel<f64>;
pub type DiagonalModelF32 = DiagonalModel<f32>;
pub type LevySpecF64 = LevySpec<f64>;
pub type LevySpecF32 = LevySpec<f32>;
pub type JumpPathF64 = JumpPath<f64>;
pub type JumpPathF32 = JumpPath<f32>;
pub type CouplingTranscriptF64 = coupling::CouplingTranscript<f64>;
pub type CouplingTranscriptF32 = coupling::CouplingTranscript<f32>;

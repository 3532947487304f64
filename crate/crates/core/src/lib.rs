//! Probabilistic solver for two-point boundary value problems.
//!
//! The solution is modelled by an integrated Wiener process prior, conditioned
//! on the boundary conditions and on the ODE at the mesh nodes with an
//! iterated extended Kalman smoother. The result is a Gaussian posterior with
//! dense output whose mean is the MAP estimate and whose covariance is
//! calibrated by a quasi-maximum-likelihood diffusion estimate. Mesh
//! refinement is driven by Bayesian quadrature of a local error measure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod calibration;
pub mod error;
pub mod gaussian;
pub mod inference;
pub mod information;
pub mod meshing;
pub mod metrics;
pub mod prior;
pub mod problems;
pub mod solver;

pub use bridge::BoundaryConditions;
pub use error::{Error, Result};
pub use gaussian::{AffineConditional, AffineMap, Gaussian, Innovation};
pub use inference::{IeksOptions, IeksOutcome, InitStrategy, Innovations, IterationRecord, Posterior};
pub use information::{BvProblem, Jacobian, VectorField};
pub use meshing::{ErrorEstimatorKind, IntervalErrors};
pub use prior::IwpPrior;
pub use problems::RegistryEntry;
pub use solver::{solve, InitialMesh, RefinementRecord, Solution, SolveStatus, SolverConfig};

//! Photon-counting statistics for continuous photodetection.
//!
//! Two counting models share one API, selected by [`ModelKind`]:
//!
//! * `Sd`: the one-count map `J rho = gamma a rho a+` with no-count generator
//!   `Y = -iH - gamma a+a / 2`.
//! * `Ep`: the exponential-phase-operator map `J rho = E- rho E+` with
//!   `Y = -iH - gamma E+E- / 2`.
//!
//! The crate is organized bottom-up:
//!
//! * [`specfun`]: special functions (Kummer M, Laguerre, modified Bessel, `Phi_k`).
//! * [`quadrature`]: adaptive Gauss-Kronrod rules for scalar and vector integrands.
//! * [`states`]: initial-state families, photon statistics, density matrices.
//! * [`fockops`]: truncated-Fock-space operators and the jump/no-count maps.
//! * [`counting`]: closed-form count distributions, EPDs, post-selected states.
//! * [`master`]: pre-selection (no readout) dynamics and a Lindblad integrator.
//! * [`montecarlo`]: quantum-jump sampling of count records.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod counting;
pub mod error;
pub mod fockops;
pub mod master;
pub mod montecarlo;
pub mod quadrature;
pub mod specfun;
pub mod states;

pub use error::{Error, Result};
pub use fockops::{ModelKind, OperatorSet, PureState};
pub use states::{DensityMatrix, PhotonStatistics, StateSpec};

/// Default tail tolerance used when truncating infinite-support distributions.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

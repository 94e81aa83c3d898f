//! Simulation and verification laboratory for Dyson Brownian motion with a
//! time-dependent limiting density.
//!
//! The crate is organized around the objects it simulates and checks:
//!
//! - [`measures`]: probability measures on the line with Stieltjes/Hilbert
//!   transforms, Poisson smoothing, inversion and quantiles.
//! - [`flow`]: the semicircular flow via its Stieltjes fixed point, density
//!   recovery, the quantile ODE and the Burgers-equation residual.
//! - [`dbm`]: the Dyson Brownian motion SDE and its localized, coupled and
//!   regularized variants, plus the linear parabolic difference dynamics.
//! - [`matrix_flow`]: Wigner-like matrices, the matrix Ornstein-Uhlenbeck
//!   flow, spectra, and local-law residuals (an independent oracle for the
//!   particle dynamics).
//! - [`local_gibbs`]: localized beta-ensembles with external potentials,
//!   reference points, the auxiliary matched ensemble, and Langevin sampling.
//! - [`diagnostics`]: empirical checks for rigidity, level repulsion, gap
//!   statistics, space-time regularity, finite speed of propagation,
//!   persistent trailing and gap flattening.

pub mod dbm;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod io;
pub mod local_gibbs;
pub mod matrix_flow;
pub mod measures;
pub mod rng;
pub mod stats;

pub use error::{LabError, Result};

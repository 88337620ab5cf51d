//! Recovery of functions on the unit cube from subsampled local averages.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] – the fine grid, the coarse patch partition, subsample sets and
//!   nodal grid functions with midpoint-rule norms.
//! * [`measurements`] – normalized measurement functionals (cube, slice,
//!   point) and the growth envelope / bound integral of the subsampled
//!   Poincaré inequality.
//! * [`elliptic`] – multilinear finite elements for `-div(a grad u)` with
//!   homogeneous Dirichlet data, direct and conjugate-gradient solvers.
//! * [`recovery`] – piecewise-constant and energy-minimizing multiscale
//!   recovery, plus the discrete sharp Poincaré constant.
//! * [`weights`] – singular weights around the sampled sets.
//! * [`analytic`] – rate functions and grid-free radial quadrature of the
//!   critical examples and counterexamples on balls.
//! * [`harness`] – experiment configurations, sweeps and log-log fits.

pub mod analytic;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod harness;
pub mod measurements;
pub mod quadrature;
pub mod recovery;
pub mod weights;

pub use error::{Error, Result};

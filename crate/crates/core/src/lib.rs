//! Learned stencil coefficients for method-of-lines PDE solvers.
//!
//! A small per-grid-point LSTM predicts perturbations of maximal-order
//! finite-difference / finite-volume coefficients. The perturbed
//! coefficients are projected onto the affine set that enforces a chosen
//! order of accuracy, then used inside an SSPRK3 time stepper. The whole
//! rollout is differentiated in reverse mode so the network can be trained
//! directly on accumulated simulation error.
//!
//! Module map:
//!
//! * [`grid`] periodic 1D grids, fields, trajectories, CSV export
//! * [`equations`] advection, inviscid Burgers and Kuramoto-Sivashinsky,
//!   initial conditions and reference solutions
//! * [`schemes`] SSPRK3, stencil generation, WENO5, fluxes, baseline solvers
//! * [`constraints`] order-of-accuracy constraint systems and projection
//! * [`model`] the LSTM coefficient predictor and learned time stepper
//! * [`training`] BPTT gradients, ADAM and the epoch loop
//! * [`evaluation`] error-ratio campaigns, histograms and correlations
//! * [`config`] run configuration shared by the library and the CLI

pub mod config;
pub mod constraints;
pub mod equations;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod model;
pub mod rng;
pub mod schemes;
pub mod training;

pub use error::{Error, Result};

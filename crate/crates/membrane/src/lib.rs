//! Pseudo-spectral simulation of a closed viscous fluid membrane with bending
//! elasticity, written on a doubly periodic isothermal chart.
//!
//! The crate is organized bottom-up:
//!
//! * [`spectral`] — grids, real fields, Fourier derivatives/inverses, norms;
//! * [`geometry`] — immersed-surface quantities (metric, curvatures, frames)
//!   and the conformal torus generator used for initial data;
//! * [`elliptic`] — the per-instant solves: tangential reconstruction,
//!   surface pressure, and the embedding/metric recovery chain;
//! * [`dynamics`] — strain rates, quadratic/cubic forcing terms, and the full
//!   right-hand side of the evolution system;
//! * [`solver`] — configuration, the semi-implicit stepper, the direct
//!   time-marching driver, and the iterated linearization driver;
//! * [`diagnostics`] — energy/constraint monitors and the inequality-constant
//!   checks used to validate the analysis toolbox numerically;
//! * [`cli`] — config parsing, output files, and the command entry points.

pub mod dynamics;
pub mod elliptic;
pub mod error;
mod fft;
pub mod geometry;
pub mod solver;
pub mod spectral;

pub use error::SimError;

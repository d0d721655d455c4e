//! Simulation and verification toolkit for delay equations driven by
//! fractional Brownian motion with Hurst index in (1/2, 1).
//!
//! The crate samples fBm exactly, solves the equation with a left-point
//! Euler scheme, evaluates pathwise Malliavin derivatives, estimates the
//! density of the solution through a Nourdin-Viens type formula and checks
//! Gaussian-type bounds numerically.

pub mod coeffs;
pub mod csv;
pub mod fbm;
pub mod grid;
pub mod hspace;
pub mod khbound;
pub mod malliavin;
pub mod nvdensity;
pub mod report;
pub mod sdde;
pub mod stats;

mod par;

pub use coeffs::{CoefficientProfile, ExprError, Expression, ScanRange};
pub use grid::Grid;
pub use report::{BoundReport, CheckPoint};
pub use sdde::{ModelSpec, SolutionPath};

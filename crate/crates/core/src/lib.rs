//! Simulation lab for symmetric exclusion processes and random walks on
//! random neighbourhood graphs built from Poisson clouds on flat tori and
//! circle bundles over them, with quadrature and spectral PDE oracles for
//! their consistency and hydrodynamic limits.

pub mod error;
pub mod experiments;
pub mod functions;
pub mod geometry;
pub mod graph;
pub mod kernels;
pub mod pde;
pub mod quadrature;
pub mod sampling;
pub mod sep;
pub mod walkers;

pub use error::{Error, Result};

//! Square plaquette model toolkit.
//!
//! Spin configurations on square lattices with plus, fixed or periodic
//! boundary conditions, their Glauber dynamics, exact spectral analysis on
//! enumerable state spaces, the rectangle-removal canonical path construction
//! and the structure of periodic ground states.

pub mod dynamics;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod lattice;
pub mod paths;
pub mod periodic;

pub use error::{Error, Result};
pub use lattice::{Boundary, DefectConfig, FixedBoundary, Lattice, LatticeSpec, Rectangle, Site, SpinConfig};

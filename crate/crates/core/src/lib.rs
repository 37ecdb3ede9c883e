//! Pseudo-spectral simulation and verification toolkit for two-dimensional,
//! density-dependent incompressible fluids with odd viscosity.

pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod picard;
pub mod runs;
pub mod initial;
pub mod io;
pub mod littlewood_paley;
pub mod viscosity;

pub use error::{Error, Result};

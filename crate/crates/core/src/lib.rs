//! Numerical laboratory for adiabatic theorems with resonances.
//!
//! Three regimes are modelled on finite discretizations: shape resonances in a
//! slowly deformed well ([`shape`]), isolated resonances exposed by complex
//! dilation ([`dilation`]), and eigenvalues embedded in a continuum
//! ([`friedrichs`]). Shared machinery lives in [`lattice`], [`spectral`] and
//! [`propagate`]; [`harness`] drives parameter sweeps and writes reports.

pub mod dilation;
pub mod error;
pub mod friedrichs;
pub mod harness;
pub mod lattice;
pub mod propagate;
pub mod quadrature;
pub mod shape;
pub mod spectral;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

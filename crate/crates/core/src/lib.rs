//! Truncated-Fock-space laboratory for nonautonomous Schrödinger dynamics and
//! local scattering operators of polynomial scalar interactions in a periodic
//! box.
//!
//! The crate is `no_std` (with `alloc`); file formats, the CLI and the
//! experiment driver live in the `scatterlab` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod fock;
pub mod generators;
pub mod howland;
pub mod linalg;
pub mod localization;
pub mod scattering;
pub mod stepper;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, C64};

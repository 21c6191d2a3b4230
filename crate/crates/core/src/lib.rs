//! Numerical toolkit for partial-data inverse boundary value problems for the
//! Schrödinger operator `-Δ - k² + q` in a slab.

pub mod boundary;
pub mod cgo;
pub mod dnmap;
pub mod error;
pub mod fft;
pub mod fields;
pub mod forward;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod par;
pub mod recovery;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

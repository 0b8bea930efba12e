//! Simulation of continuous-variable polarization squeezing.

// `!(x > 0.0)` guards are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apparatus;
pub mod error;
pub mod gaussian;
pub mod netlist;
pub mod oracle;
pub mod spectra;
pub mod stokes;

pub use error::{Error, Result};

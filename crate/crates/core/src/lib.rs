//! Simulation and analysis of single rare-earth-ion hyperfine spectroscopy.
//!
//! The crate models the ground and optically excited hyperfine manifolds of a
//! Pr³⁺ ion under multi-frequency laser drive with population rate equations,
//! generates excitation, hole-burning, saturation and pulse-sequence data with
//! photon-counting noise, and fits such data.
//!
//! Units throughout: frequencies in MHz, times in µs, optical power in pW,
//! rates in s⁻¹, count rates in counts/s.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod io;
pub mod levels;
pub mod pulses;
pub mod rng;
pub mod spectra;

pub use error::{Error, Result, Violation};

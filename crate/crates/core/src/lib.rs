//! Simulation and analysis of pulsed-field coherent control in a two-dot
//! quantum-dot molecule charge qubit.
//!
//! All quantities use one fixed unit system: time in ps, energy in meV,
//! current in pA, temperature in K. See [`units`].
//!
//! Module map:
//! - [`params`]: device parameters, validation, the temperature-dependent
//!   dephasing model and the `key = value` parameter file format.
//! - [`dynamics`]: two-level S/AS density-matrix evolution during the pulse.
//! - [`protocol`]: the pulse-train engine producing substrate current traces.
//! - [`accounting`]: per-pulse, per-molecule charge arithmetic.
//! - [`analysis`]: background removal, periodogram and period detection.
//! - [`fitting`]: damped-cosine and simulator-in-the-loop parameter fits.
//! - [`spectra`]: DC and magneto-conductance double-peak curves.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod analysis;
pub mod dynamics;
mod error;
pub mod exec;
pub mod fitting;
pub mod params;
pub mod protocol;
pub mod spectra;
pub mod units;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use params::{DeviceParams, SweepSpec, ValidationReport};

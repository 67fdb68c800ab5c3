//! Design and verification toolkit for heralded single-photon sources built
//! from multi-stage fiber nonlinear interferometers.
//!
//! - [`spectral`]: joint spectral function of the interferometer and dual-band filtering.
//! - [`modal`]: Schmidt decomposition, heralding efficiencies, g⁽²⁾ and HOM predictions.
//! - [`sim`]: Monte Carlo photon-counting experiments (coincidences, HBT, HOM).
//! - [`analysis`]: data reduction from counts to heralding, g⁽²⁾ and visibilities.
//! - [`design`]: island detection, scoring and design-space sweeps.
//! - [`config`], [`io`], [`checks`]: job configuration, file formats and the end-to-end checks.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod checks;
pub mod config;
pub mod design;
pub mod error;
pub mod io;
pub mod modal;
pub mod sim;
pub mod spectral;
pub mod units;

pub use error::{NliError, Result};
pub use nalgebra;

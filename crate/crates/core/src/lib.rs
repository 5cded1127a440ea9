//! Analysis and simulation toolkit for coherent quantum fingerprinting with
//! wavelength-division multiplexing.
//!
//! * [`protocol`]: parameters, code geometry, click probabilities, cost.
//! * [`binom`]: binomial tails for trial counts up to ~1e18.
//! * [`decision`]: threshold rule and its worst-case error.
//! * [`optimizer`]: minimum photon number and parameter sweeps.
//! * [`montecarlo`]: seeded event-level simulation.
//! * [`fiber`]: dispersion timing and channel capacity.
//! * [`baselines`]: classical comparison curves.
//! * [`table1`]: bundled regression fixture of published results.
//!
//! Interchangeable numerical strategies are selected by name through
//! [`registry::Registry`] instances; [`Numerics`] bundles the choices.

pub mod baselines;
pub mod binom;
pub mod decision;
pub mod error;
pub mod fiber;
pub mod montecarlo;
pub mod optimizer;
pub mod protocol;
pub mod registry;
pub mod table1;

mod numerics;

pub use error::{Error, Result};
pub use numerics::{Numerics, NumericsConfig};

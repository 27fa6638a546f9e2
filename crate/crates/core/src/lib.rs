//! Ground-state spin Hamiltonian toolkit for ¹⁴NV and ¹⁵NV centers.
//!
//! Energies and frequencies are in kHz, fields in Gauss, temperatures in
//! Kelvin and angles in radians.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eigen;
pub mod error;
pub mod extraction;
pub mod io;
pub mod matrix;
pub mod optimize;
pub mod perturbation;
pub mod presets;
pub mod ramsey;
pub mod spin;
pub mod transitions;

pub use error::{Error, Result};
pub use spin::{CouplingParams, FieldConfig, HamiltonianOptions, Isotope, IsotopeSpec, StateLabel};
pub use transitions::{TransitionLabel, TransitionSet};

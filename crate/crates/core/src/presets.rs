//! Reference coupling parameters at 297 K and their temperature dependence,
//! plus the reference transition table used as a test fixture.
//!
//! Values are stored in kHz, kHz/K and kHz/K²; uncertainties are one standard
//! deviation in the same units.

use serde::{Deserialize, Serialize};

use crate::spin::{CouplingParams, Isotope, GAMMA_E};

pub const REFERENCE_TEMPERATURE: f64 = 297.0;
pub const REFERENCE_BZ: f64 = 470.0;
pub const PRESET_NAME: &str = "table1_297K";

/// Quadratic Taylor data for one parameter about 297 K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalEntry {
    pub value: f64,
    pub value_sigma: f64,
    /// kHz/K
    pub d1: Option<f64>,
    pub d1_sigma: Option<f64>,
    /// ppm/K as tabulated
    pub fractional_ppm: Option<f64>,
    /// kHz/K²
    pub d2: Option<f64>,
}

impl ThermalEntry {
    const fn fixed(value: f64, value_sigma: f64) -> Self {
        Self { value, value_sigma, d1: None, d1_sigma: None, fractional_ppm: None, d2: None }
    }

    const fn full(value: f64, value_sigma: f64, d1: f64, d1_sigma: f64, ppm: f64, d2: f64) -> Self {
        Self {
            value,
            value_sigma,
            d1: Some(d1),
            d1_sigma: Some(d1_sigma),
            fractional_ppm: Some(ppm),
            d2: Some(d2),
        }
    }

    /// Polynomial coefficients `[c0, c1, c2]` about 297 K with `c2 = d2/2`.
    pub fn taylor_coefficients(&self) -> [f64; 3] {
        [self.value, self.d1.unwrap_or(0.0), 0.5 * self.d2.unwrap_or(0.0)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalPreset {
    pub isotope: Isotope,
    pub d: ThermalEntry,
    pub q: Option<ThermalEntry>,
    pub a_par: ThermalEntry,
    pub a_perp: ThermalEntry,
}

pub fn thermal_preset(isotope: Isotope) -> ThermalPreset {
    match isotope {
        Isotope::N14 => ThermalPreset {
            isotope,
            d: ThermalEntry::full(2870.28e3, 0.03e3, -72.5, 0.5, -25.3, -0.39),
            q: Some(ThermalEntry::full(-4945.88, 0.01, 0.0355, 0.0003, -7.17, 0.00022)),
            a_par: ThermalEntry::full(-2165.19, 0.08, 0.197, 0.001, -91.0, 0.00073),
            a_perp: ThermalEntry::full(-2635.0, 2.0, 0.154, 0.005, -58.0, 0.00053),
        },
        Isotope::N15 => ThermalPreset {
            isotope,
            d: ThermalEntry::full(2870.38e3, 0.03e3, -72.0, 1.0, -25.1, -0.40),
            q: None,
            a_par: ThermalEntry::full(3033.3, 0.1, -0.269, 0.003, -89.0, -0.00098),
            a_perp: ThermalEntry::fixed(3680.0, 20.0),
        },
    }
}

/// Coupling parameters at 297 K.
pub fn table1_params(isotope: Isotope) -> CouplingParams {
    let t = thermal_preset(isotope);
    CouplingParams {
        d: t.d.value,
        q: t.q.map_or(0.0, |e| e.value),
        a_par: t.a_par.value,
        a_perp: t.a_perp.value,
        gamma_e: GAMMA_E,
        gamma_n: isotope.gamma_n(),
    }
}

/// Looks up a named parameter preset.
pub fn named_params(name: &str, isotope: Isotope) -> Option<CouplingParams> {
    name.eq_ignore_ascii_case(PRESET_NAME).then(|| table1_params(isotope))
}

/// One row of the reference transition table at 297 K and 470 G.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTransition {
    pub name: &'static str,
    /// kHz
    pub value: f64,
    pub value_sigma: f64,
    /// Hz/K
    pub derivative: f64,
    pub derivative_sigma: f64,
}

const fn row(name: &'static str, value: f64, vs: f64, derivative: f64, ds: f64) -> ReferenceTransition {
    ReferenceTransition { name, value, value_sigma: vs, derivative, derivative_sigma: ds }
}

pub const REFERENCE_TRANSITIONS_N14: [ReferenceTransition; 9] = [
    row("f1", 5085.95, 0.01, -35.2, 0.2),
    row("f2", 4799.65, 0.01, -35.3, 0.2),
    row("f3", 2925.22, 0.08, 161.5, 0.7),
    row("f4", 6970.98, 0.08, -232.8, 0.7),
    row("f5", 7257.28, 0.08, -232.7, 0.7),
    row("f6", 2636.14, 0.08, 161.5, 0.7),
    row("f1-f2", 286.299, 0.002, 0.149, 0.008),
    row("f5-f4", 286.299, 0.002, 0.149, 0.008),
    row("f3-f6", 289.081, 0.002, -0.000, 0.0),
];

pub const REFERENCE_TRANSITIONS_N15: [ReferenceTransition; 3] = [
    row("f7", 205.89, 0.03, -0.31, 0.02),
    row("f8", 2825.8, 0.1, -268.0, 2.0),
    row("f9", 3234.8, 0.1, -269.0, 2.0),
];

pub fn reference_transitions(isotope: Isotope) -> &'static [ReferenceTransition] {
    match isotope {
        Isotope::N14 => &REFERENCE_TRANSITIONS_N14,
        Isotope::N15 => &REFERENCE_TRANSITIONS_N15,
    }
}

/// Measured isotopic ratios at room temperature.
pub const GAMMA_N_ISOTOPE_RATIO: f64 = 1.40285;
pub const A_PAR_ISOTOPE_RATIO: f64 = 1.40096;
/// Measured γe/γn for ¹⁴N.
pub const GAMMA_RATIO_N14: f64 = 9113.9;

/// Uncertainty assigned to synthetic electron-spin (MW) lines, kHz.
pub const MW_SIGMA_KHZ: f64 = 1.0;

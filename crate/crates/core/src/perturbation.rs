//! Closed-form perturbative nuclear-spin frequencies and misalignment
//! response, used to cross-check exact diagonalization.
//!
//! The series expand in `A⊥/F±` with `F± = D ± γe·Bz` and treat `γe·Bx` to
//! second order. They omit the transverse nuclear Zeeman term, so the
//! matching exact reference is `HamiltonianOptions::perturbative()`.
//!
//! In the ¹⁴N `Bx²` brackets the quadrupole and hyperfine denominators are
//! taken as magnitudes (`3/|Q|`, `|Q| ∓ |A∥|`). With the signed values the
//! bracket flips sign and disagrees with exact diagonalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::{CouplingParams, FieldConfig, HamiltonianOptions, Isotope, IsotopeSpec};
use crate::transitions::{transition_set_with, TransitionLabel, TransitionSet};

/// `|F−|` must exceed this multiple of `|A⊥|`.
pub const VALIDITY_FACTOR: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationContext {
    pub f_plus: f64,
    pub f_minus: f64,
    pub params: CouplingParams,
    pub bz: f64,
    pub bx: f64,
}

impl PerturbationContext {
    pub fn new(params: CouplingParams, field: &FieldConfig) -> Result<Self> {
        let f_plus = params.d + params.gamma_e * field.bz;
        let f_minus = params.d - params.gamma_e * field.bz;
        check_margin(f_minus, params.a_perp)?;
        Ok(Self { f_plus, f_minus, params, bz: field.bz, bx: field.bx })
    }
}

fn check_margin(f_minus: f64, a_perp: f64) -> Result<()> {
    let limit = VALIDITY_FACTOR * a_perp.abs();
    if !(f_minus.abs() > limit) || f_minus == 0.0 {
        return Err(Error::ValidityMargin { f_minus, limit });
    }
    Ok(())
}

/// Margin check over a whole axial-field interval, so a coarse grid cannot
/// step over the anti-crossing.
pub fn check_field_range(p: &CouplingParams, bz_min: f64, bz_max: f64) -> Result<()> {
    let (lo, hi) = (bz_min.min(bz_max), bz_min.max(bz_max));
    let crossing = p.d / p.gamma_e;
    let closest = if (lo..=hi).contains(&crossing) {
        crossing
    } else if (crossing - lo).abs() < (crossing - hi).abs() {
        lo
    } else {
        hi
    };
    check_margin(p.d - p.gamma_e * closest, p.a_perp)
}

fn require_isotope(p: &CouplingParams, iso: &IsotopeSpec) -> Result<()> {
    p.validate(iso)
}

/// Lowest-order expressions, axial field only.
pub fn nuclear_freqs_2nd(ctx: &PerturbationContext, iso: &IsotopeSpec) -> Result<TransitionSet> {
    if ctx.bx != 0.0 {
        return Err(Error::InvalidInput(format!(
            "second-order expressions need Bx = 0, got {} G",
            ctx.bx
        )));
    }
    let p = &ctx.params;
    require_isotope(p, iso)?;
    let a2 = p.a_perp * p.a_perp;
    let (fp, fm) = (ctx.f_plus, ctx.f_minus);
    let zn = p.gamma_n.abs() * ctx.bz;
    let freqs: Vec<(u8, f64)> = match iso.isotope {
        Isotope::N14 => {
            let (q, a) = (p.q.abs(), p.a_par.abs());
            vec![
                (1, q + zn - a2 / fm),
                (2, q - zn - a2 / fp),
                (3, q - a + zn),
                (4, q + a - zn + a2 / fm),
                (5, q + a + zn + a2 / fp),
                (6, q - a - zn),
            ]
        }
        Isotope::N15 => {
            let a = p.a_par;
            vec![
                (7, zn + 0.5 * a2 * (1.0 / fm - 1.0 / fp)),
                (8, a - zn - 0.5 * a2 / fm),
                (9, a + zn - 0.5 * a2 / fp),
            ]
        }
    };
    TransitionSet::from_frequencies(
        iso.isotope,
        ctx.bz,
        ctx.bx,
        freqs.into_iter().map(|(k, f)| (TransitionLabel::Nuclear(k), f)),
    )
}

/// Second-order shifts in `1/F±` including the fourth-order `A⊥²·X/F²` terms
/// and the `γe²Bx²/2` brackets.
pub fn nuclear_freqs_full(ctx: &PerturbationContext, iso: &IsotopeSpec) -> Result<TransitionSet> {
    let p = &ctx.params;
    require_isotope(p, iso)?;
    let a2 = p.a_perp * p.a_perp;
    let (fp, fm) = (ctx.f_plus, ctx.f_minus);
    let (fp2, fm2) = (fp * fp, fm * fm);
    let zn = p.gamma_n.abs() * ctx.bz;
    let bx2 = 0.5 * (p.gamma_e * ctx.bx).powi(2);
    let sum_inv2 = (1.0 / fp + 1.0 / fm).powi(2);
    let diff_inv2 = 1.0 / fm2 - 1.0 / fp2;

    let freqs: Vec<(u8, f64)> = match iso.isotope {
        Isotope::N14 => {
            let (q, a) = (p.q.abs(), p.a_par.abs());
            let (qm, qp) = (q - a, q + a);
            if bx2 != 0.0 && (q == 0.0 || qm.abs() < 1e-9 * q || qp == 0.0) {
                return Err(Error::SingularDenominator(format!(
                    "|Q| = {q}, |A∥| = {a} in transverse-field terms"
                )));
            }
            // guarded above whenever the bracket is used
            let inv = |x: f64| if bx2 == 0.0 { 0.0 } else { 1.0 / x };
            let r21 = 2.0 * inv(qm) + inv(qp);
            let r12 = inv(qm) + 2.0 * inv(qp);
            let q3 = 3.0 * inv(q);
            vec![
                (
                    1,
                    q + zn - a2 / fm - a2 * ((q - a) / fm2 + (2.0 * q - a) / fp2)
                        + bx2 * (a2 * q3 * sum_inv2 - a * diff_inv2),
                ),
                (
                    2,
                    q - zn - a2 / fp - a2 * ((2.0 * q - a) / fm2 + (q - a) / fp2)
                        + bx2 * (a2 * q3 * sum_inv2 + a * diff_inv2),
                ),
                (3, q - a + zn - a2 * (2.0 * q - a) / fm2 + bx2 * (a2 * r21 / fm2 + a / fm2)),
                (4, q + a - zn + a2 / fm - a2 * q / fm2 + bx2 * (a2 * r12 / fm2 - a / fm2)),
                (5, q + a + zn + a2 / fp - a2 * q / fp2 + bx2 * (a2 * r12 / fp2 - a / fp2)),
                (6, q - a - zn - a2 * (2.0 * q - a) / fp2 + bx2 * (a2 * r21 / fp2 + a / fp2)),
            ]
        }
        Isotope::N15 => {
            let a = p.a_par;
            if bx2 != 0.0 && (a == 0.0 || zn == 0.0) {
                return Err(Error::SingularDenominator(format!(
                    "A∥ = {a}, |γn|Bz = {zn} in transverse-field terms"
                )));
            }
            let (inv_a, inv_zn) = if bx2 == 0.0 { (0.0, 0.0) } else { (1.0 / a, 1.0 / zn) };
            let edge = a2 * inv_a - a;
            vec![
                (
                    7,
                    zn + 0.5 * a2 * (1.0 / fm - 1.0 / fp)
                        + 0.25 * a2 * (a / fm2 - a / fp2)
                        + bx2 * (a2 * inv_zn * sum_inv2 - a * diff_inv2),
                ),
                (8, a - zn - 0.5 * a2 / fm - 0.25 * a2 * a / fm2 + bx2 * edge / fm2),
                (9, a + zn - 0.5 * a2 / fp - 0.25 * a2 * a / fp2 + bx2 * edge / fp2),
            ]
        }
    };
    TransitionSet::from_frequencies(
        iso.isotope,
        ctx.bz,
        ctx.bx,
        freqs.into_iter().map(|(k, f)| (TransitionLabel::Nuclear(k), f)),
    )
}

/// Transitions with a closed-form misalignment response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngularTransition {
    Dq,
    F7,
}

impl AngularTransition {
    pub fn isotope(self) -> Isotope {
        match self {
            AngularTransition::Dq => Isotope::N14,
            AngularTransition::F7 => Isotope::N15,
        }
    }

    pub fn label(self) -> TransitionLabel {
        match self {
            AngularTransition::Dq => TransitionLabel::Dq,
            AngularTransition::F7 => TransitionLabel::Nuclear(7),
        }
    }

    pub fn for_isotope(isotope: Isotope) -> Self {
        match isotope {
            Isotope::N14 => AngularTransition::Dq,
            Isotope::N15 => AngularTransition::F7,
        }
    }

    /// Frequency scale the fractional shift is quoted against, kHz.
    pub fn baseline(self, p: &CouplingParams, bz: f64) -> f64 {
        match self {
            AngularTransition::Dq => 2.0 * p.gamma_n.abs() * bz,
            AngularTransition::F7 => p.gamma_n.abs() * bz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularResponse {
    pub beta: f64,
    /// kHz
    pub baseline: f64,
    pub transition: AngularTransition,
}

impl AngularResponse {
    /// Predicted shift `½·β·θ²·baseline` in kHz, θ in radians.
    pub fn shift(&self, theta: f64) -> f64 {
        0.5 * self.beta * theta * theta * self.baseline
    }
}

fn check_gamma_sign(p: &CouplingParams, t: AngularTransition) -> Result<()> {
    let expected = t.isotope().gamma_n().signum();
    if p.gamma_n == 0.0 || p.gamma_n.signum() != expected {
        return Err(Error::IsotopeMismatch(format!(
            "gamma_n = {} does not belong to {}",
            p.gamma_n,
            t.isotope()
        )));
    }
    Ok(())
}

/// Quadratic misalignment coefficient, `Δf/baseline ≈ ½·β·θ²`.
pub fn beta_coefficient(p: &CouplingParams, bz: f64, transition: AngularTransition) -> Result<AngularResponse> {
    check_gamma_sign(p, transition)?;
    check_margin(p.d - p.gamma_e * bz, p.a_perp)?;
    let ge_bz2 = (p.gamma_e * bz).powi(2);
    let denom = (p.d * p.d - ge_bz2).powi(2);
    let ratio = (p.gamma_e / p.gamma_n).abs();
    let beta = match transition {
        AngularTransition::Dq => -ratio * 4.0 * p.a_par.abs() * p.d * ge_bz2 / denom,
        AngularTransition::F7 => ratio * ratio * 4.0 * p.a_perp.powi(2) * p.d * p.d / denom,
    };
    Ok(AngularResponse { beta, baseline: transition.baseline(p, bz), transition })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    /// kHz
    pub frequency: f64,
    /// Signed term in parentheses: `−(…)` for fDQ, `+(…)` for f7.
    pub fractional_correction: f64,
}

/// Zeeman-dominated model of fDQ or f7 at axial field `bz`.
pub fn fdq_f7_field_model(p: &CouplingParams, bz: f64, transition: AngularTransition) -> Result<FieldModel> {
    check_gamma_sign(p, transition)?;
    check_margin(p.d - p.gamma_e * bz, p.a_perp)?;
    let core = (p.gamma_e / p.gamma_n).abs() * p.a_perp.powi(2) / (p.d * p.d - (p.gamma_e * bz).powi(2));
    let fractional_correction = match transition {
        AngularTransition::Dq => -core,
        AngularTransition::F7 => core,
    };
    let frequency = transition.baseline(p, bz) * (1.0 + fractional_correction);
    Ok(FieldModel { frequency, fractional_correction })
}

/// Exact frequency of fDQ or f7 with the field tilted by `theta` (radians)
/// at fixed axial component: `Bx = Bz·tan θ`.
pub fn exact_angular_frequency(
    p: &CouplingParams,
    bz: f64,
    theta: f64,
    transition: AngularTransition,
    opts: HamiltonianOptions,
) -> Result<f64> {
    let iso = transition.isotope().spec();
    let field = FieldConfig::new(bz, bz * theta.tan());
    transition_set_with(p, &field, &iso, opts)?.require(transition.label())
}

/// Exact shift `f(θ) − f(0)` in kHz at fixed `Bz`.
pub fn exact_angular_shift(
    p: &CouplingParams,
    bz: f64,
    theta: f64,
    transition: AngularTransition,
    opts: HamiltonianOptions,
) -> Result<f64> {
    let f0 = exact_angular_frequency(p, bz, 0.0, transition, opts)?;
    Ok(exact_angular_frequency(p, bz, theta, transition, opts)? - f0)
}

/// Least-squares β from exact shifts at the given angles, using the model
/// `Δf = β·(½θ²·baseline)` through the origin.
pub fn exact_beta(
    p: &CouplingParams,
    bz: f64,
    thetas: &[f64],
    transition: AngularTransition,
    opts: HamiltonianOptions,
) -> Result<AngularResponse> {
    if thetas.is_empty() || thetas.iter().all(|t| *t == 0.0) {
        return Err(Error::InsufficientData("need at least one nonzero angle".into()));
    }
    let baseline = transition.baseline(p, bz);
    let f0 = exact_angular_frequency(p, bz, 0.0, transition, opts)?;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &t in thetas {
        let x = 0.5 * t * t * baseline;
        let y = exact_angular_frequency(p, bz, t, transition, opts)? - f0;
        sxy += x * y;
        sxx += x * x;
    }
    Ok(AngularResponse { beta: sxy / sxx, baseline, transition })
}

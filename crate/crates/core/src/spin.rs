//! Spin operators and the NV ground-state Hamiltonian.
//!
//! All energies are in kHz, fields in Gauss. The product basis is ordered
//! `(ms, mI)` with `ms ∈ {+1, 0, −1}` as the outer index and `mI` descending
//! as the inner index, so row `3·k + j` (N14) or `2·k + j` (N15) is
//! `ms = 1 − k`, `mI = I − j`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Electron gyromagnetic ratio in kHz/G.
pub const GAMMA_E: f64 = 2803.3;
/// ¹⁴N nuclear gyromagnetic ratio in kHz/G.
pub const GAMMA_N14: f64 = 0.30759;
/// ¹⁵N nuclear gyromagnetic ratio in kHz/G.
pub const GAMMA_N15: f64 = -0.43150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Isotope {
    N14,
    N15,
}

impl Isotope {
    /// Twice the nuclear spin.
    pub fn two_i(self) -> i8 {
        match self {
            Isotope::N14 => 2,
            Isotope::N15 => 1,
        }
    }

    pub fn nuclear_spin(self) -> f64 {
        f64::from(self.two_i()) / 2.0
    }

    pub fn hilbert_dim(self) -> usize {
        3 * (self.two_i() as usize + 1)
    }

    pub fn gamma_n(self) -> f64 {
        match self {
            Isotope::N14 => GAMMA_N14,
            Isotope::N15 => GAMMA_N15,
        }
    }

    pub fn spec(self) -> IsotopeSpec {
        IsotopeSpec {
            isotope: self,
            nuclear_spin: self.nuclear_spin(),
            gamma_n: self.gamma_n(),
            hilbert_dim: self.hilbert_dim(),
        }
    }
}

impl fmt::Display for Isotope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Isotope::N14 => "n14",
            Isotope::N15 => "n15",
        })
    }
}

impl std::str::FromStr for Isotope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n14" | "14n" | "14nv" => Ok(Isotope::N14),
            "n15" | "15n" | "15nv" => Ok(Isotope::N15),
            _ => Err(Error::Parse(format!("unknown isotope '{s}' (expected n14 or n15)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsotopeSpec {
    pub isotope: Isotope,
    pub nuclear_spin: f64,
    /// kHz/G, signed.
    pub gamma_n: f64,
    pub hilbert_dim: usize,
}

impl IsotopeSpec {
    pub fn n14() -> Self {
        Isotope::N14.spec()
    }

    pub fn n15() -> Self {
        Isotope::N15.spec()
    }
}

/// Signed spin-Hamiltonian coefficients for one isotope, in kHz and kHz/G.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub d: f64,
    pub q: f64,
    pub a_par: f64,
    pub a_perp: f64,
    pub gamma_e: f64,
    pub gamma_n: f64,
}

impl CouplingParams {
    pub fn validate(&self, iso: &IsotopeSpec) -> Result<()> {
        let values = [self.d, self.q, self.a_par, self.a_perp, self.gamma_e, self.gamma_n];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coupling parameter in {self:?}")));
        }
        if self.gamma_e <= 0.0 {
            return Err(Error::InvalidInput(format!("gamma_e must be positive, got {}", self.gamma_e)));
        }
        if iso.isotope == Isotope::N15 && self.q != 0.0 {
            return Err(Error::IsotopeMismatch(format!("Q must be 0 for n15, got {}", self.q)));
        }
        let expected_sign = iso.isotope.gamma_n().signum();
        if self.gamma_n != 0.0 && self.gamma_n.signum() != expected_sign {
            return Err(Error::IsotopeMismatch(format!(
                "gamma_n = {} has the wrong sign for {}",
                self.gamma_n, iso.isotope
            )));
        }
        Ok(())
    }
}

/// Static magnetic field. The transverse component is normalized to `bx ≥ 0`
/// (a rotation about the NV axis leaves the spectrum unchanged).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub bz: f64,
    pub bx: f64,
}

impl FieldConfig {
    pub fn new(bz: f64, bx: f64) -> Self {
        Self { bz, bx: bx.abs() }
    }

    pub fn axial(bz: f64) -> Self {
        Self::new(bz, 0.0)
    }

    /// Field of magnitude `b` tilted by `theta` radians from the NV axis.
    pub fn from_polar(b: f64, theta: f64) -> Self {
        Self::new(b * theta.cos(), b * theta.sin())
    }

    pub fn magnitude(&self) -> f64 {
        self.bz.hypot(self.bx)
    }

    pub fn theta(&self) -> f64 {
        self.bx.atan2(self.bz)
    }
}

/// Basis state label; `two_mi` is twice the nuclear projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateLabel {
    pub ms: i8,
    pub two_mi: i8,
}

impl StateLabel {
    pub const fn new(ms: i8, two_mi: i8) -> Self {
        Self { ms, two_mi }
    }

    pub fn mi(&self) -> f64 {
        f64::from(self.two_mi) / 2.0
    }

    pub fn is_valid_for(&self, isotope: Isotope) -> bool {
        let two_i = isotope.two_i();
        (-1..=1).contains(&self.ms)
            && self.two_mi.abs() <= two_i
            && (self.two_mi - two_i) % 2 == 0
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:+},{})", self.ms, format_mi(self.two_mi))
    }
}

/// Formats a nuclear projection given as twice its value: `+1`, `0`, `-1/2`.
pub fn format_mi(two_mi: i8) -> String {
    if two_mi == 0 {
        "0".to_string()
    } else if two_mi % 2 == 0 {
        format!("{:+}", two_mi / 2)
    } else {
        format!("{:+}/2", two_mi)
    }
}

/// Ordered product basis for an isotope.
pub fn basis_labels(isotope: Isotope) -> Vec<StateLabel> {
    let two_i = isotope.two_i();
    let mut out = Vec::with_capacity(isotope.hilbert_dim());
    for ms in [1, 0, -1] {
        let mut two_mi = two_i;
        while two_mi >= -two_i {
            out.push(StateLabel::new(ms, two_mi));
            two_mi -= 2;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinOperators {
    pub sz: Matrix,
    pub sx: Matrix,
    pub s_plus: Matrix,
    pub s_minus: Matrix,
}

impl SpinOperators {
    pub fn dim(&self) -> usize {
        self.sz.dim()
    }

    pub fn identity(&self) -> Matrix {
        Matrix::identity(self.dim())
    }
}

/// Spin-`s` operators in the `|s, m⟩` basis with `m` descending.
pub fn spin_matrices(s: f64) -> Result<SpinOperators> {
    let two_s = 2.0 * s;
    if !s.is_finite() || s < 0.0 || (two_s - two_s.round()).abs() > 1e-12 || two_s > 64.0 {
        return Err(Error::InvalidSpin(s));
    }
    let n = two_s.round() as usize + 1;
    let m = |k: usize| s - k as f64;
    let sz = Matrix::from_diag(&(0..n).map(m).collect::<Vec<_>>());
    let mut s_plus = Matrix::zeros(n);
    for k in 1..n {
        // ⟨m+1|S+|m⟩ with |m⟩ at index k and |m+1⟩ at index k−1
        let mk = m(k);
        s_plus[(k - 1, k)] = (s * (s + 1.0) - mk * (mk + 1.0)).sqrt();
    }
    let s_minus = s_plus.transpose();
    let mut sx = s_plus.clone();
    sx.add_scaled(1.0, &s_minus);
    let sx = sx.scaled(0.5);
    Ok(SpinOperators { sz, sx, s_plus, s_minus })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianOptions {
    /// Include `−γn·Bx·Ix`. Perturbative expansions omit it.
    pub transverse_nuclear_zeeman: bool,
}

impl Default for HamiltonianOptions {
    fn default() -> Self {
        Self { transverse_nuclear_zeeman: true }
    }
}

impl HamiltonianOptions {
    /// The Hamiltonian that the closed-form perturbation series expands.
    pub fn perturbative() -> Self {
        Self { transverse_nuclear_zeeman: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianMatrix {
    pub entries: Matrix,
    pub basis: Vec<StateLabel>,
    pub isotope: Isotope,
}

pub fn build_hamiltonian(
    p: &CouplingParams,
    field: &FieldConfig,
    iso: &IsotopeSpec,
) -> Result<HamiltonianMatrix> {
    build_hamiltonian_with(p, field, iso, HamiltonianOptions::default())
}

/// Assembles
/// `H = D·Sz² + Q·Iz² + A∥·SzIz + γeBz·Sz − γnBz·Iz + (A⊥/2)(S₊I₋ + S₋I₊) + γeBx·Sx − γnBx·Ix`.
pub fn build_hamiltonian_with(
    p: &CouplingParams,
    field: &FieldConfig,
    iso: &IsotopeSpec,
    opts: HamiltonianOptions,
) -> Result<HamiltonianMatrix> {
    p.validate(iso)?;
    if !field.bz.is_finite() || !field.bx.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite field {field:?}")));
    }
    let s = spin_matrices(1.0)?;
    let i = spin_matrices(iso.nuclear_spin)?;
    let dim = s.dim() * i.dim();
    if dim != iso.hilbert_dim {
        return Err(Error::DimensionMismatch { expected: iso.hilbert_dim, found: dim });
    }
    let (es, ei) = (s.identity(), i.identity());

    let mut h = Matrix::zeros(dim);
    h.add_scaled(p.d, &s.sz.matmul(&s.sz).kron(&ei));
    h.add_scaled(p.q, &es.kron(&i.sz.matmul(&i.sz)));
    h.add_scaled(p.a_par, &s.sz.kron(&i.sz));
    h.add_scaled(p.gamma_e * field.bz, &s.sz.kron(&ei));
    h.add_scaled(-p.gamma_n * field.bz, &es.kron(&i.sz));
    let mut flip_flop = s.s_plus.kron(&i.s_minus);
    flip_flop.add_scaled(1.0, &s.s_minus.kron(&i.s_plus));
    h.add_scaled(0.5 * p.a_perp, &flip_flop);
    h.add_scaled(p.gamma_e * field.bx, &s.sx.kron(&ei));
    if opts.transverse_nuclear_zeeman {
        h.add_scaled(-p.gamma_n * field.bx, &es.kron(&i.sx));
    }

    Ok(HamiltonianMatrix { entries: h, basis: basis_labels(iso.isotope), isotope: iso.isotope })
}

/// Diagonal energy `E(ms, mI)` of the secular Hamiltonian (no A⊥, no Bx).
pub fn unperturbed_energy(p: &CouplingParams, bz: f64, label: StateLabel) -> f64 {
    let ms = f64::from(label.ms);
    let mi = label.mi();
    ms * ms * p.d + mi * mi * p.q + ms * mi * p.a_par + ms * p.gamma_e * bz - mi * p.gamma_n * bz
}

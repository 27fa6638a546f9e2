//! Eigenstate labeling and named transition frequencies.
//!
//! Level pairs (first, second) for each label:
//!
//! | label | pair |
//! |-------|------|
//! | f1 | (0,0) ↔ (0,+1) |
//! | f2 | (0,0) ↔ (0,−1) |
//! | f3 | (−1,0) ↔ (−1,+1) |
//! | f4 | (−1,0) ↔ (−1,−1) |
//! | f5 | (+1,0) ↔ (+1,+1) |
//! | f6 | (+1,0) ↔ (+1,−1) |
//! | f7 | (0,−1/2) ↔ (0,+1/2) |
//! | f8 | (−1,+1/2) ↔ (−1,−1/2) |
//! | f9 | (+1,+1/2) ↔ (+1,−1/2) |
//! | fplus_mI / fminus_mI | (0,mI) ↔ (±1,mI) |
//! | fdq | (0,−1) ↔ (0,+1) |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::eigen::{eigh, EigenSystem};
use crate::error::{Error, Result};
use crate::spin::{
    build_hamiltonian_with, format_mi, CouplingParams, FieldConfig, HamiltonianOptions, Isotope,
    IsotopeSpec, StateLabel,
};

/// Minimum squared overlap for an eigenvector to be labeled.
pub const AMBIGUITY_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransitionLabel {
    /// Nuclear-spin transition f1…f9.
    Nuclear(u8),
    /// ms = 0 ↔ +1 at fixed mI (twice mI stored).
    Plus(i8),
    /// ms = 0 ↔ −1 at fixed mI.
    Minus(i8),
    /// ¹⁴N double-quantum transition, f1 − f2.
    Dq,
}

impl TransitionLabel {
    /// Labels a transition set carries for an isotope, in report order.
    pub fn all_for(isotope: Isotope) -> Vec<TransitionLabel> {
        let two_i = isotope.two_i();
        let mut out: Vec<_> = match isotope {
            Isotope::N14 => (1..=6).map(TransitionLabel::Nuclear).collect(),
            Isotope::N15 => (7..=9).map(TransitionLabel::Nuclear).collect(),
        };
        let mut two_mi = two_i;
        while two_mi >= -two_i {
            out.push(TransitionLabel::Plus(two_mi));
            out.push(TransitionLabel::Minus(two_mi));
            two_mi -= 2;
        }
        if isotope == Isotope::N14 {
            out.push(TransitionLabel::Dq);
        }
        out
    }

    pub fn nuclear_for(isotope: Isotope) -> Vec<TransitionLabel> {
        match isotope {
            Isotope::N14 => (1..=6).map(TransitionLabel::Nuclear).collect(),
            Isotope::N15 => (7..=9).map(TransitionLabel::Nuclear).collect(),
        }
    }

    /// The two levels whose energy difference defines this transition.
    pub fn level_pair(&self, isotope: Isotope) -> Option<(StateLabel, StateLabel)> {
        let s = StateLabel::new;
        let pair = match (isotope, *self) {
            (Isotope::N14, TransitionLabel::Nuclear(1)) => (s(0, 0), s(0, 2)),
            (Isotope::N14, TransitionLabel::Nuclear(2)) => (s(0, 0), s(0, -2)),
            (Isotope::N14, TransitionLabel::Nuclear(3)) => (s(-1, 0), s(-1, 2)),
            (Isotope::N14, TransitionLabel::Nuclear(4)) => (s(-1, 0), s(-1, -2)),
            (Isotope::N14, TransitionLabel::Nuclear(5)) => (s(1, 0), s(1, 2)),
            (Isotope::N14, TransitionLabel::Nuclear(6)) => (s(1, 0), s(1, -2)),
            (Isotope::N14, TransitionLabel::Dq) => (s(0, -2), s(0, 2)),
            (Isotope::N15, TransitionLabel::Nuclear(7)) => (s(0, -1), s(0, 1)),
            (Isotope::N15, TransitionLabel::Nuclear(8)) => (s(-1, 1), s(-1, -1)),
            (Isotope::N15, TransitionLabel::Nuclear(9)) => (s(1, 1), s(1, -1)),
            (_, TransitionLabel::Plus(two_mi)) => (s(0, two_mi), s(1, two_mi)),
            (_, TransitionLabel::Minus(two_mi)) => (s(0, two_mi), s(-1, two_mi)),
            _ => return None,
        };
        (pair.0.is_valid_for(isotope) && pair.1.is_valid_for(isotope)).then_some(pair)
    }

    pub fn is_valid_for(&self, isotope: Isotope) -> bool {
        self.level_pair(isotope).is_some()
    }

    pub fn is_nuclear(&self) -> bool {
        matches!(self, TransitionLabel::Nuclear(_) | TransitionLabel::Dq)
    }
}

impl fmt::Display for TransitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransitionLabel::Nuclear(k) => write!(f, "f{k}"),
            TransitionLabel::Plus(m) => write!(f, "fplus_{}", format_mi(*m)),
            TransitionLabel::Minus(m) => write!(f, "fminus_{}", format_mi(*m)),
            TransitionLabel::Dq => f.write_str("fdq"),
        }
    }
}

fn parse_two_mi(s: &str) -> Option<i8> {
    let (num, half) = match s.strip_suffix("/2") {
        Some(n) => (n, true),
        None => (s, false),
    };
    let v: i8 = num.strip_prefix('+').unwrap_or(num).parse().ok()?;
    if half {
        (v % 2 != 0).then_some(v)
    } else {
        v.checked_mul(2)
    }
}

impl FromStr for TransitionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || Error::Parse(format!("unknown transition label '{s}'"));
        if t == "fdq" {
            return Ok(TransitionLabel::Dq);
        }
        if let Some(rest) = t.strip_prefix("fplus_") {
            return parse_two_mi(rest).map(TransitionLabel::Plus).ok_or_else(bad);
        }
        if let Some(rest) = t.strip_prefix("fminus_") {
            return parse_two_mi(rest).map(TransitionLabel::Minus).ok_or_else(bad);
        }
        if let Some(rest) = t.strip_prefix('f') {
            if let Ok(k) = rest.parse::<u8>() {
                if (1..=9).contains(&k) {
                    return Ok(TransitionLabel::Nuclear(k));
                }
            }
        }
        Err(bad())
    }
}

impl Serialize for TransitionLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TransitionLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledLevel {
    pub label: StateLabel,
    /// kHz
    pub energy: f64,
    /// Largest squared eigenvector component.
    pub overlap: f64,
}

/// Assigns each eigenvector the basis label of its largest squared component.
pub fn label_states(es: &EigenSystem, basis: &[StateLabel]) -> Result<Vec<LabeledLevel>> {
    let n = es.dim();
    if basis.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: basis.len() });
    }
    let mut claimed: Vec<Option<usize>> = vec![None; n];
    let mut levels = Vec::with_capacity(n);
    for col in 0..n {
        let (row, overlap) = (0..n)
            .map(|r| (r, es.eigenvectors[(r, col)].powi(2)))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if overlap < AMBIGUITY_THRESHOLD {
            return Err(Error::AmbiguousLabeling(format!(
                "eigenvalue {:.3} kHz has max squared overlap {overlap:.4} < {AMBIGUITY_THRESHOLD} (nearest {})",
                es.eigenvalues[col], basis[row]
            )));
        }
        if let Some(other) = claimed[row] {
            return Err(Error::AmbiguousLabeling(format!(
                "eigenvectors {other} and {col} both claim {}",
                basis[row]
            )));
        }
        claimed[row] = Some(col);
        levels.push(LabeledLevel { label: basis[row], energy: es.eigenvalues[col], overlap });
    }
    Ok(levels)
}

/// Exact-diagonalization levels for given parameters and field.
pub fn compute_levels(
    p: &CouplingParams,
    field: &FieldConfig,
    iso: &IsotopeSpec,
    opts: HamiltonianOptions,
) -> Result<Vec<LabeledLevel>> {
    let h = build_hamiltonian_with(p, field, iso, opts)?;
    let es = eigh(&h.entries)?;
    label_states(&es, &h.basis).map_err(|e| match e {
        Error::AmbiguousLabeling(msg) => Error::AmbiguousLabeling(format!(
            "at Bz = {} G, Bx = {} G: {msg}",
            field.bz, field.bx
        )),
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub label: TransitionLabel,
    /// kHz, nonnegative.
    pub freq: f64,
    /// Higher-energy level when computed from energies; otherwise the first
    /// level of the canonical pair.
    pub upper: StateLabel,
    pub lower: StateLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub isotope: Isotope,
    pub bz: f64,
    pub bx: f64,
    entries: BTreeMap<TransitionLabel, Transition>,
}

impl TransitionSet {
    pub fn new(isotope: Isotope, bz: f64, bx: f64) -> Self {
        Self { isotope, bz, bx, entries: BTreeMap::new() }
    }

    /// Builds a set from bare frequencies (e.g. measured or tabulated values).
    pub fn from_frequencies(
        isotope: Isotope,
        bz: f64,
        bx: f64,
        freqs: impl IntoIterator<Item = (TransitionLabel, f64)>,
    ) -> Result<Self> {
        let mut ts = Self::new(isotope, bz, bx);
        for (label, freq) in freqs {
            let (a, b) = label
                .level_pair(isotope)
                .ok_or_else(|| Error::InvalidInput(format!("{label} is not a {isotope} transition")))?;
            ts.insert(Transition { label, freq, upper: a, lower: b });
        }
        Ok(ts)
    }

    /// Builds a set from labeled levels using the canonical level pairs.
    pub fn from_levels(isotope: Isotope, field: &FieldConfig, levels: &[LabeledLevel]) -> Result<Self> {
        let energy = |l: StateLabel| {
            levels
                .iter()
                .find(|lv| lv.label == l)
                .map(|lv| lv.energy)
                .ok_or_else(|| Error::MissingTransition(format!("level {l}")))
        };
        let mut ts = Self::new(isotope, field.bz, field.bx);
        for label in TransitionLabel::all_for(isotope) {
            let (a, b) = label.level_pair(isotope).expect("label valid for isotope");
            let (ea, eb) = (energy(a)?, energy(b)?);
            let (upper, lower) = if ea >= eb { (a, b) } else { (b, a) };
            ts.insert(Transition { label, freq: (ea - eb).abs(), upper, lower });
        }
        Ok(ts)
    }

    pub fn insert(&mut self, t: Transition) {
        self.entries.insert(t.label, t);
    }

    pub fn get(&self, label: TransitionLabel) -> Option<f64> {
        self.entries.get(&label).map(|t| t.freq)
    }

    pub fn require(&self, label: TransitionLabel) -> Result<f64> {
        self.get(label).ok_or_else(|| Error::MissingTransition(label.to_string()))
    }

    pub fn transition(&self, label: TransitionLabel) -> Option<&Transition> {
        self.entries.get(&label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Shorthand for `Nuclear(k)`.
    pub fn f(&self, k: u8) -> Result<f64> {
        self.require(TransitionLabel::Nuclear(k))
    }
}

pub fn transition_set(p: &CouplingParams, field: &FieldConfig, iso: &IsotopeSpec) -> Result<TransitionSet> {
    transition_set_with(p, field, iso, HamiltonianOptions::default())
}

pub fn transition_set_with(
    p: &CouplingParams,
    field: &FieldConfig,
    iso: &IsotopeSpec,
    opts: HamiltonianOptions,
) -> Result<TransitionSet> {
    let levels = compute_levels(p, field, iso, opts)?;
    TransitionSet::from_levels(iso.isotope, field, &levels)
}

/// Difference of MW line centers, `(f₊¹⁵ + f₋¹⁵)/2 − (f₊¹⁴ + f₋¹⁴)/2`.
pub fn isotopic_d_shift(fplus14: f64, fminus14: f64, fplus15: f64, fminus15: f64) -> Result<f64> {
    let all = [fplus14, fminus14, fplus15, fminus15];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite MW frequency".into()));
    }
    Ok(0.5 * (fplus15 + fminus15) - 0.5 * (fplus14 + fminus14))
}

/// Electron-spin line pair at one nuclear projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwLines {
    pub f_plus: f64,
    pub f_minus: f64,
}

impl MwLines {
    pub fn from_set(ts: &TransitionSet, two_mi: i8) -> Result<Self> {
        Ok(Self {
            f_plus: ts.require(TransitionLabel::Plus(two_mi))?,
            f_minus: ts.require(TransitionLabel::Minus(two_mi))?,
        })
    }
}

/// Closed-form ¹⁴N estimates from linear combinations of measured lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimates {
    pub gamma_ratio: f64,
    /// kHz
    pub gamma_n_bz: f64,
    /// |Q|, kHz
    pub q_abs: f64,
    /// |A∥|, kHz
    pub a_par_abs: f64,
}

/// `mw` are the mI = +1 electron-spin lines.
pub fn ratio_estimators(ts: &TransitionSet, mw: MwLines) -> Result<RatioEstimates> {
    if ts.isotope != Isotope::N14 {
        return Err(Error::InvalidInput("ratio estimators need a n14 transition set".into()));
    }
    let f: Vec<f64> = (1..=6).map(|k| ts.f(k)).collect::<Result<_>>()?;
    let (f1, f2, f3, f4, f5, f6) = (f[0], f[1], f[2], f[3], f[4], f[5]);
    let split = f3 - f6;
    if split == 0.0 {
        return Err(Error::SingularDenominator("f3 = f6".into()));
    }
    Ok(RatioEstimates {
        gamma_ratio: (mw.f_plus - mw.f_minus + f5 - f3) / split,
        gamma_n_bz: split / 2.0,
        q_abs: (f1 + f2 + f3 + f4 + f5 + f6) / 6.0,
        a_par_abs: (f1 + f2 - 2.0 * f3 + f4 + f5 - 2.0 * f6) / 6.0,
    })
}

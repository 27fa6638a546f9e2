//! Inverse problem (measured frequencies to coupling parameters), thermal
//! polynomial models and the hyperfine anisotropy decomposition.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, polyfit_weighted, weighted_objective, OptimOptions, PolynomialModel};
use crate::presets::{reference_transitions, thermal_preset, ThermalEntry, MW_SIGMA_KHZ, REFERENCE_TEMPERATURE};
use crate::spin::{CouplingParams, FieldConfig, Isotope, GAMMA_E};
use crate::transitions::{transition_set, TransitionLabel, TransitionSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub label: TransitionLabel,
    /// kHz
    pub freq: f64,
    /// kHz
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub temperature: f64,
    pub isotope: Isotope,
    pub entries: Vec<Measurement>,
    pub sample: Option<String>,
    pub nominal_bz: Option<f64>,
}

impl MeasurementSet {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for m in &self.entries {
            if !m.label.is_valid_for(self.isotope) {
                return Err(Error::InvalidInput(format!("{} is not a {} transition", m.label, self.isotope)));
            }
            if !m.freq.is_finite() || !(m.sigma > 0.0) || !m.sigma.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{} at {} K: frequency {} with sigma {} (sigma must be positive)",
                    m.label, self.temperature, m.freq, m.sigma
                )));
            }
            if !seen.insert(m.label) {
                return Err(Error::InvalidInput(format!("{} listed twice at {} K", m.label, self.temperature)));
            }
        }
        Ok(())
    }

    /// Entries in canonical label order, so fits do not depend on input order.
    pub fn sorted_entries(&self) -> Vec<Measurement> {
        let mut e = self.entries.clone();
        e.sort_by_key(|m| m.label);
        e
    }
}

/// Transitions measured per temperature: the nuclear lines plus the two
/// electron-spin lines of the highest nuclear projection.
pub fn default_measurement_labels(isotope: Isotope) -> Vec<TransitionLabel> {
    let mut v = TransitionLabel::nuclear_for(isotope);
    let top = isotope.two_i();
    v.push(TransitionLabel::Plus(top));
    v.push(TransitionLabel::Minus(top));
    v
}

/// Reference uncertainty for a transition, kHz.
pub fn reference_sigma(isotope: Isotope, label: TransitionLabel) -> f64 {
    let name = label.to_string();
    reference_transitions(isotope)
        .iter()
        .find(|r| r.name == name)
        .map_or(MW_SIGMA_KHZ, |r| r.value_sigma)
}

/// Forward-model measurement set with Gaussian noise of `noise_scale·σ`.
pub fn synthetic_measurements<R: Rng + ?Sized>(
    p: &CouplingParams,
    field: &FieldConfig,
    isotope: Isotope,
    temperature: f64,
    noise_scale: f64,
    rng: &mut R,
) -> Result<MeasurementSet> {
    let ts = transition_set(p, field, &isotope.spec())?;
    let mut entries = Vec::new();
    for label in default_measurement_labels(isotope) {
        let sigma = reference_sigma(isotope, label);
        let noise = if noise_scale > 0.0 {
            Normal::new(0.0, noise_scale * sigma)
                .map_err(|e| Error::InvalidInput(e.to_string()))?
                .sample(rng)
        } else {
            0.0
        };
        entries.push(Measurement { label, freq: ts.require(label)? + noise, sigma });
    }
    Ok(MeasurementSet { temperature, isotope, entries, sample: None, nominal_bz: Some(field.bz) })
}

/// Fit parameters in the field-scaled parametrization `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub isotope: Isotope,
    pub d: f64,
    pub gamma_e_bz: f64,
    /// Always 0 for ¹⁵N and not part of the vector.
    pub q: f64,
    pub a_par: f64,
    pub a_perp: f64,
    pub gamma_e_bx: f64,
    /// Signed `γe/γn`.
    pub gamma_ratio: f64,
}

pub const PARAM_NAMES_N14: [&str; 7] = ["D", "gamma_e_bz", "Q", "A_par", "A_perp", "gamma_e_bx", "gamma_ratio"];
pub const PARAM_NAMES_N15: [&str; 6] = ["D", "gamma_e_bz", "A_par", "A_perp", "gamma_e_bx", "gamma_ratio"];

impl ParamVector {
    pub fn names(isotope: Isotope) -> &'static [&'static str] {
        match isotope {
            Isotope::N14 => &PARAM_NAMES_N14,
            Isotope::N15 => &PARAM_NAMES_N15,
        }
    }

    /// Position of `γe·Bx` in the vector.
    pub fn bx_index(isotope: Isotope) -> usize {
        Self::names(isotope).iter().position(|n| *n == "gamma_e_bx").expect("bx present")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self.isotope {
            Isotope::N14 => {
                vec![self.d, self.gamma_e_bz, self.q, self.a_par, self.a_perp, self.gamma_e_bx, self.gamma_ratio]
            }
            Isotope::N15 => vec![self.d, self.gamma_e_bz, self.a_par, self.a_perp, self.gamma_e_bx, self.gamma_ratio],
        }
    }

    pub fn from_slice(isotope: Isotope, v: &[f64]) -> Result<Self> {
        let n = Self::names(isotope).len();
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: v.len() });
        }
        Ok(match isotope {
            Isotope::N14 => Self {
                isotope,
                d: v[0],
                gamma_e_bz: v[1],
                q: v[2],
                a_par: v[3],
                a_perp: v[4],
                gamma_e_bx: v[5],
                gamma_ratio: v[6],
            },
            Isotope::N15 => Self {
                isotope,
                d: v[0],
                gamma_e_bz: v[1],
                q: 0.0,
                a_par: v[2],
                a_perp: v[3],
                gamma_e_bx: v[4],
                gamma_ratio: v[5],
            },
        })
    }

    pub fn from_model(p: &CouplingParams, field: &FieldConfig, isotope: Isotope) -> Result<Self> {
        if p.gamma_n == 0.0 {
            return Err(Error::InvalidInput("gamma_n must be nonzero".into()));
        }
        Ok(Self {
            isotope,
            d: p.d,
            gamma_e_bz: p.gamma_e * field.bz,
            q: if isotope == Isotope::N15 { 0.0 } else { p.q },
            a_par: p.a_par,
            a_perp: p.a_perp,
            gamma_e_bx: p.gamma_e * field.bx,
            gamma_ratio: p.gamma_e / p.gamma_n,
        })
    }

    /// Physical parameters given the external electron gyromagnetic ratio.
    pub fn to_model(&self, gamma_e: f64) -> Result<(CouplingParams, FieldConfig)> {
        if self.gamma_ratio == 0.0 || !self.gamma_ratio.is_finite() {
            return Err(Error::InvalidInput(format!("gamma ratio {} is not usable", self.gamma_ratio)));
        }
        let p = CouplingParams {
            d: self.d,
            q: self.q,
            a_par: self.a_par,
            a_perp: self.a_perp,
            gamma_e,
            gamma_n: gamma_e / self.gamma_ratio,
        };
        Ok((p, FieldConfig::new(self.gamma_e_bz / gamma_e, self.gamma_e_bx / gamma_e)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub optim: OptimOptions,
    /// Hold `γe·Bx` at its guess.
    pub fix_bx: bool,
    pub max_restarts: usize,
    /// Relative objective improvement below which restarts stop.
    pub restart_tol: f64,
}

/// `γe·Bx` is held at its starting value unless `fix_bx` is cleared. From a
/// single field point it is nearly degenerate with D and `γe·Bz`, and the
/// `Bx ≥ 0` boundary biases both when the true misalignment is small.
impl Default for FitOptions {
    fn default() -> Self {
        Self { optim: OptimOptions::default(), fix_bx: true, max_restarts: 8, restart_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub label: TransitionLabel,
    /// model − measured, kHz
    pub residual: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub temperature: f64,
    pub params: ParamVector,
    pub objective: f64,
    pub residuals: Vec<Residual>,
    pub converged: bool,
    pub iterations: usize,
    pub restarts: usize,
    /// Linearized one-sigma uncertainties in vector order; `None` for held
    /// parameters and for `γe·Bx`, which enters quadratically.
    pub uncertainties: Vec<Option<f64>>,
}

impl FitResult {
    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        let i = ParamVector::names(self.params.isotope).iter().position(|n| *n == name)?;
        self.uncertainties[i]
    }
}

struct Problem<'a> {
    isotope: Isotope,
    entries: &'a [Measurement],
    free: Vec<usize>,
    base: Vec<f64>,
}

impl Problem<'_> {
    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.base.clone();
        for (k, &i) in self.free.iter().enumerate() {
            v[i] = x[k];
        }
        v
    }

    fn model(&self, full: &[f64]) -> Result<Vec<f64>> {
        let pv = ParamVector::from_slice(self.isotope, full)?;
        let (p, field) = pv.to_model(GAMMA_E)?;
        let ts = transition_set(&p, &field, &self.isotope.spec())?;
        self.entries.iter().map(|m| ts.require(m.label)).collect()
    }

    fn objective(&self, full: &[f64]) -> Result<f64> {
        let model = self.model(full)?;
        let meas: Vec<f64> = self.entries.iter().map(|m| m.freq).collect();
        let sig: Vec<f64> = self.entries.iter().map(|m| m.sigma).collect();
        weighted_objective(&model, &meas, &sig)
    }
}

/// Weighted least-squares fit of the exact forward model to one
/// measurement set, restarting Nelder-Mead from the incumbent until the
/// objective stops improving.
pub fn extract_params(ms: &MeasurementSet, guess: &ParamVector, opts: &FitOptions) -> Result<FitResult> {
    ms.validate()?;
    if guess.isotope != ms.isotope {
        return Err(Error::IsotopeMismatch(format!(
            "guess is {} but measurements are {}",
            guess.isotope, ms.isotope
        )));
    }
    let entries = ms.sorted_entries();
    let n_all = ParamVector::names(ms.isotope).len();
    let bx = ParamVector::bx_index(ms.isotope);
    let free: Vec<usize> = (0..n_all).filter(|&i| !(opts.fix_bx && i == bx)).collect();
    if entries.len() < free.len() {
        return Err(Error::InsufficientData(format!(
            "{} measurements at {} K for {} free parameters",
            entries.len(),
            ms.temperature,
            free.len()
        )));
    }
    let problem = Problem { isotope: ms.isotope, entries: &entries, free, base: guess.to_vec() };

    let mut x: Vec<f64> = problem.free.iter().map(|&i| problem.base[i]).collect();
    let f_guess = problem.objective(&problem.full(&x))?;
    let mut f_best = f_guess;
    let mut iterations = 0;
    let mut restarts = 0;
    let mut converged;
    loop {
        let r = nelder_mead(|v| problem.objective(&problem.full(v)), &x, &opts.optim)?;
        iterations += r.iterations;
        converged = r.converged;
        let improvement = f_best - r.f_min;
        if r.f_min <= f_best {
            x = r.x_min;
            f_best = r.f_min;
        }
        // absolute floor keeps noiseless fits from chasing rounding noise
        if converged && improvement <= opts.restart_tol * f_best + 1e-12 {
            break;
        }
        if restarts >= opts.max_restarts {
            break;
        }
        restarts += 1;
    }
    if !converged {
        return Err(Error::FitNoConvergence(format!(
            "{} at {} K: objective {f_best:.6e} after {iterations} iterations and {restarts} restarts",
            ms.isotope, ms.temperature
        )));
    }

    let mut full = problem.full(&x);
    full[bx] = full[bx].abs();
    let params = ParamVector::from_slice(ms.isotope, &full)?;
    let model = problem.model(&full)?;
    let residuals = entries
        .iter()
        .zip(&model)
        .map(|(m, f)| Residual { label: m.label, residual: f - m.freq, sigma: m.sigma })
        .collect();
    let uncertainties = linearized_uncertainties(&problem, &full, bx)?;
    Ok(FitResult {
        temperature: ms.temperature,
        params,
        objective: f_best,
        residuals,
        converged,
        iterations,
        restarts,
        uncertainties,
    })
}

fn linearized_uncertainties(problem: &Problem<'_>, full: &[f64], bx: usize) -> Result<Vec<Option<f64>>> {
    let cols: Vec<usize> = problem.free.iter().copied().filter(|&i| i != bx).collect();
    let m = problem.entries.len();
    let mut jac = vec![vec![0.0; cols.len()]; m];
    for (c, &i) in cols.iter().enumerate() {
        let h = 1e-6 * full[i].abs().max(1.0);
        let mut up = full.to_vec();
        let mut dn = full.to_vec();
        up[i] += h;
        dn[i] -= h;
        let (fu, fd) = (problem.model(&up)?, problem.model(&dn)?);
        for r in 0..m {
            jac[r][c] = (fu[r] - fd[r]) / (2.0 * h) / problem.entries[r].sigma;
        }
    }
    let k = cols.len();
    let mut fisher = vec![vec![0.0; k]; k];
    for row in &jac {
        for a in 0..k {
            for b in 0..k {
                fisher[a][b] += row[a] * row[b];
            }
        }
    }
    let mut out = vec![None; full.len()];
    if let Ok(cov) = crate::optimize::invert_spd(fisher) {
        for (c, &i) in cols.iter().enumerate() {
            out[i] = Some(cov[c][c].sqrt());
        }
    }
    Ok(out)
}

/// Degree-4 temperature models for the coupling parameters of one isotope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalModels {
    pub isotope: Isotope,
    pub d: PolynomialModel,
    pub q: Option<PolynomialModel>,
    pub a_par: PolynomialModel,
    pub a_perp: PolynomialModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFit {
    /// G
    pub bz: f64,
    pub residuals: Vec<Residual>,
    pub objective: f64,
}

/// Refits only the axial field, all couplings held at `p`. Absorbs a shared
/// field-calibration offset across lines measured at one temperature.
pub fn fit_axial_field(p: &CouplingParams, bz0: f64, ms: &MeasurementSet) -> Result<FieldFit> {
    ms.validate()?;
    if ms.entries.is_empty() {
        return Err(Error::InsufficientData("no lines to fit the field to".into()));
    }
    let entries = ms.sorted_entries();
    let freqs: Vec<f64> = entries.iter().map(|m| m.freq).collect();
    let sigmas: Vec<f64> = entries.iter().map(|m| m.sigma).collect();
    let iso = ms.isotope.spec();
    let model = |bz: f64| -> Result<Vec<f64>> {
        let ts = transition_set(p, &FieldConfig::axial(bz), &iso)?;
        entries.iter().map(|m| ts.require(m.label)).collect()
    };
    let opts = OptimOptions { initial_simplex_scale: 1e-3, tol_x: 1e-12, ..OptimOptions::default() };
    let r = nelder_mead(|x| weighted_objective(&model(x[0])?, &freqs, &sigmas), &[bz0], &opts)?;
    if !r.converged {
        return Err(Error::FitNoConvergence(format!("axial field refit after {} iterations", r.iterations)));
    }
    let bz = r.x_min[0];
    let residuals = model(bz)?
        .iter()
        .zip(&entries)
        .map(|(f, m)| Residual { label: m.label, residual: f - m.freq, sigma: m.sigma })
        .collect();
    Ok(FieldFit { bz, residuals, objective: r.f_min })
}

/// Value and derivatives of one model at the reference temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalSummary {
    pub parameter: String,
    pub value: f64,
    /// kHz/K
    pub d1: f64,
    pub fractional_ppm: f64,
    /// kHz/K²
    pub d2: f64,
    pub rms_residual: f64,
}

pub const MODEL_T_MIN: f64 = 77.0;
pub const MODEL_T_MAX: f64 = 400.0;

fn taylor_model(e: &ThermalEntry, scale: f64) -> PolynomialModel {
    let c = e.taylor_coefficients();
    PolynomialModel {
        coefficients: c.iter().map(|v| v * scale).chain([0.0, 0.0]).collect(),
        t0: REFERENCE_TEMPERATURE,
        rms_residual: 0.0,
    }
}

impl ThermalModels {
    /// Quadratic Taylor models from the reference parameter table. ¹⁵N A⊥
    /// follows the fractional temperature dependence of A∥.
    pub fn from_preset(isotope: Isotope) -> Self {
        let t = thermal_preset(isotope);
        let a_perp = match isotope {
            Isotope::N14 => taylor_model(&t.a_perp, 1.0),
            Isotope::N15 => taylor_model(&t.a_par, t.a_perp.value / t.a_par.value),
        };
        Self {
            isotope,
            d: taylor_model(&t.d, 1.0),
            q: t.q.as_ref().map(|e| taylor_model(e, 1.0)),
            a_par: taylor_model(&t.a_par, 1.0),
            a_perp,
        }
    }

    pub fn params_at(&self, t: f64) -> CouplingParams {
        CouplingParams {
            d: self.d.value(t),
            q: self.q.as_ref().map_or(0.0, |m| m.value(t)),
            a_par: self.a_par.value(t),
            a_perp: self.a_perp.value(t),
            gamma_e: GAMMA_E,
            gamma_n: self.isotope.gamma_n(),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &PolynomialModel)> {
        let mut v = vec![("D", &self.d)];
        if let Some(q) = &self.q {
            v.push(("Q", q));
        }
        v.push(("A_par", &self.a_par));
        v.push(("A_perp", &self.a_perp));
        v
    }

    pub fn summary(&self, t: f64) -> Vec<ThermalSummary> {
        self.named()
            .into_iter()
            .map(|(name, m)| ThermalSummary {
                parameter: name.to_string(),
                value: m.value(t),
                d1: m.derivative(t, 1),
                fractional_ppm: m.fractional_derivative_ppm(t),
                d2: m.derivative(t, 2),
                rms_residual: m.rms_residual,
            })
            .collect()
    }
}

/// Degree-4 fits about 297 K of each fitted parameter against temperature.
pub fn thermal_models(series: &[(f64, FitResult)]) -> Result<ThermalModels> {
    let Some((_, first)) = series.first() else {
        return Err(Error::InsufficientData("empty temperature series".into()));
    };
    let isotope = first.params.isotope;
    if series.iter().any(|(_, r)| r.params.isotope != isotope) {
        return Err(Error::IsotopeMismatch("mixed isotopes in temperature series".into()));
    }
    let temps: Vec<f64> = series.iter().map(|(t, _)| *t).collect();
    let distinct: BTreeSet<u64> = temps.iter().map(|t| t.to_bits()).collect();
    let (lo, hi) = temps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(*t), b.max(*t)));
    if distinct.len() < 5 || hi - lo < 100.0 {
        return Err(Error::InsufficientData(format!(
            "thermal fits need >= 5 temperatures spanning >= 100 K, got {} spanning {:.1} K",
            distinct.len(),
            hi - lo
        )));
    }
    let sigma = vec![1.0; temps.len()];
    let fit = |get: fn(&ParamVector) -> f64| -> Result<PolynomialModel> {
        let y: Vec<f64> = series.iter().map(|(_, r)| get(&r.params)).collect();
        polyfit_weighted(&temps, &y, &sigma, 4, REFERENCE_TEMPERATURE)
    };
    Ok(ThermalModels {
        isotope,
        d: fit(|p| p.d)?,
        q: if isotope == Isotope::N14 { Some(fit(|p| p.q)?) } else { None },
        a_par: fit(|p| p.a_par)?,
        a_perp: fit(|p| p.a_perp)?,
    })
}

/// Hyperfine decomposition. Inputs in kHz, `fermi_f` and `dipolar_d` in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyResult {
    pub fermi_f: f64,
    pub dipolar_d: f64,
    pub eta: f64,
    pub cs2: f64,
    pub cp2: f64,
    pub hybridization_ratio: f64,
}

/// Fermi-contact constant for unit s-density, MHz.
pub const FERMI_SCALE_MHZ: f64 = 1811.0;
/// Dipolar constant for unit p-density, MHz.
pub const DIPOLAR_SCALE_MHZ: f64 = 55.52;

pub fn anisotropy(a_par: f64, a_perp: f64) -> Result<AnisotropyResult> {
    if !a_par.is_finite() || !a_perp.is_finite() || a_par == 0.0 || a_perp == 0.0 {
        return Err(Error::InvalidInput(format!("hyperfine values must be finite and nonzero: {a_par}, {a_perp}")));
    }
    let f = (a_par + 2.0 * a_perp) / 1e3;
    let d = (a_par - a_perp) / 1e3;
    if f == 0.0 {
        return Err(Error::SingularDenominator("Fermi contact term is zero".into()));
    }
    let cs_eta = f.abs() / FERMI_SCALE_MHZ;
    let cp_eta = d.abs() / DIPOLAR_SCALE_MHZ;
    let eta = cs_eta + cp_eta;
    let (cs2, cp2) = (cs_eta / eta, cp_eta / eta);
    Ok(AnisotropyResult { fermi_f: f, dipolar_d: d, eta, cs2, cp2, hybridization_ratio: cp2 / cs2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    /// kHz
    pub freq: f64,
    /// Hz/K
    pub derivative: f64,
}

fn table_rows(ts: &TransitionSet) -> Result<Vec<(String, f64)>> {
    let mut rows: Vec<(String, f64)> = ts.iter().map(|t| (t.label.to_string(), t.freq)).collect();
    if ts.isotope == Isotope::N14 {
        rows.retain(|(n, _)| n != "fdq");
        rows.push(("f1-f2".into(), ts.f(1)? - ts.f(2)?));
        rows.push(("f5-f4".into(), ts.f(5)? - ts.f(4)?));
        rows.push(("f3-f6".into(), ts.f(3)? - ts.f(6)?));
    }
    Ok(rows)
}

/// Frequencies at `t` with temperature derivatives from central differences
/// at `t ± 1 K`.
pub fn transition_table(models: &ThermalModels, t: f64, bz: f64, isotope: Isotope) -> Result<Vec<TableRow>> {
    if models.isotope != isotope {
        return Err(Error::IsotopeMismatch(format!("models are {}, requested {isotope}", models.isotope)));
    }
    if !(MODEL_T_MIN..=MODEL_T_MAX).contains(&t) {
        return Err(Error::InvalidInput(format!(
            "temperature {t} K outside model range [{MODEL_T_MIN}, {MODEL_T_MAX}] K"
        )));
    }
    let field = FieldConfig::axial(bz);
    let at = |temp: f64| -> Result<Vec<(String, f64)>> {
        table_rows(&transition_set(&models.params_at(temp), &field, &isotope.spec())?)
    };
    let (mid, up, dn) = (at(t)?, at(t + 1.0)?, at(t - 1.0)?);
    Ok(mid
        .into_iter()
        .zip(up.iter().zip(&dn))
        .map(|((name, freq), ((_, fu), (_, fd)))| TableRow { name, freq, derivative: 1e3 * (fu - fd) / 2.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::table1_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn roundtrip_set(iso: Isotope) -> (CouplingParams, FieldConfig, MeasurementSet) {
        let p = table1_params(iso);
        let field = FieldConfig::axial(470.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ms = synthetic_measurements(&p, &field, iso, 297.0, 0.0, &mut rng).unwrap();
        (p, field, ms)
    }

    fn perturbed_guess(p: &CouplingParams, field: &FieldConfig, iso: Isotope) -> ParamVector {
        let mut g = ParamVector::from_model(p, field, iso).unwrap();
        g.d += 3.0;
        g.gamma_e_bz *= 1.0 + 2e-5;
        g.q *= 1.0005;
        g.a_par *= 0.9995;
        g.a_perp *= 1.01;
        g.gamma_ratio *= 1.0002;
        g
    }

    #[test]
    fn param_vector_roundtrip() {
        for iso in [Isotope::N14, Isotope::N15] {
            let p = table1_params(iso);
            let field = FieldConfig::new(470.0, 0.3);
            let pv = ParamVector::from_model(&p, &field, iso).unwrap();
            assert_eq!(ParamVector::from_slice(iso, &pv.to_vec()).unwrap(), pv);
            let (p2, f2) = pv.to_model(GAMMA_E).unwrap();
            assert!((p2.gamma_n - p.gamma_n).abs() < 1e-15);
            assert!((f2.bz - 470.0).abs() < 1e-12 && (f2.bx - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_roundtrip_n14() {
        let (p, field, ms) = roundtrip_set(Isotope::N14);
        let guess = perturbed_guess(&p, &field, Isotope::N14);
        let opts = FitOptions { fix_bx: false, ..FitOptions::default() };
        let r = extract_params(&ms, &guess, &opts).unwrap();
        assert!((r.params.q - p.q).abs() < 0.01, "{:?}", r.params);
        assert!((r.params.a_par - p.a_par).abs() < 0.01);
        assert!((r.params.a_perp - p.a_perp).abs() < 0.5);
        assert!((r.params.d - p.d).abs() < 1.0);
        assert!(r.objective <= 1e-6);
    }

    #[test]
    fn fit_is_order_invariant() {
        let (p, field, mut ms) = roundtrip_set(Isotope::N15);
        let guess = perturbed_guess(&p, &field, Isotope::N15);
        let opts = FitOptions::default();
        let a = extract_params(&ms, &guess, &opts).unwrap();
        ms.entries.reverse();
        let b = extract_params(&ms, &guess, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn underdetermined_rejected() {
        let (p, field, mut ms) = roundtrip_set(Isotope::N14);
        ms.entries.truncate(1);
        let guess = ParamVector::from_model(&p, &field, Isotope::N14).unwrap();
        assert!(matches!(
            extract_params(&ms, &guess, &FitOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn wrong_label_rejected() {
        let (_, _, mut ms) = roundtrip_set(Isotope::N14);
        ms.entries[0].label = TransitionLabel::Nuclear(7);
        assert!(ms.validate().is_err());
        let (_, _, mut ms) = roundtrip_set(Isotope::N14);
        ms.entries[0].sigma = 0.0;
        assert!(ms.validate().is_err());
    }

    #[test]
    fn thermal_constant_series() {
        let (p, field, _) = roundtrip_set(Isotope::N14);
        let pv = ParamVector::from_model(&p, &field, Isotope::N14).unwrap();
        let series: Vec<(f64, FitResult)> = (0..6)
            .map(|i| {
                let t = 100.0 + 50.0 * i as f64;
                let r = FitResult {
                    temperature: t,
                    params: pv,
                    objective: 0.0,
                    residuals: vec![],
                    converged: true,
                    iterations: 0,
                    restarts: 0,
                    uncertainties: vec![None; 7],
                };
                (t, r)
            })
            .collect();
        let m = thermal_models(&series).unwrap();
        for s in m.summary(297.0) {
            assert!(s.d1.abs() < 1e-9 * s.value.abs(), "{s:?}");
            assert!(s.d2.abs() < 1e-9 * s.value.abs(), "{s:?}");
        }
        assert!(thermal_models(&series[..4]).is_err());
    }

    #[test]
    fn preset_models_reproduce_table_slopes() {
        let m = ThermalModels::from_preset(Isotope::N14);
        let q = m.q.as_ref().unwrap();
        assert!((q.derivative(297.0, 1) - 0.0355).abs() < 1e-12);
        assert!((q.derivative(297.0, 2) - 0.00022).abs() < 1e-12);
        let m15 = ThermalModels::from_preset(Isotope::N15);
        let frac = |pm: &PolynomialModel| pm.fractional_derivative_ppm(297.0);
        assert!((frac(&m15.a_perp) - frac(&m15.a_par)).abs() < 1e-9);
    }

    #[test]
    fn anisotropy_table_values() {
        let r = anisotropy(-2165.19, -2635.0).unwrap();
        assert!((r.fermi_f + 7.43519).abs() < 1e-9);
        assert!((r.dipolar_d - 0.46981).abs() < 1e-9);
        assert!((r.eta - 1.2568e-2).abs() < 1e-5, "{}", r.eta);
        assert!((r.hybridization_ratio - 2.061).abs() < 2e-3, "{}", r.hybridization_ratio);
        assert!((r.cs2 + r.cp2 - 1.0).abs() < 1e-15);
        let iso = anisotropy(100.0, 100.0).unwrap();
        assert_eq!(iso.cp2, 0.0);
        assert!(anisotropy(-200.0, 100.0).is_err());
    }

    #[test]
    fn table_rejects_out_of_range() {
        let m = ThermalModels::from_preset(Isotope::N14);
        assert!(transition_table(&m, 450.0, 470.0, Isotope::N14).is_err());
        assert!(transition_table(&m, 297.0, 470.0, Isotope::N15).is_err());
    }

    #[test]
    fn table_derivatives_n14() {
        let m = ThermalModels::from_preset(Isotope::N14);
        let rows = transition_table(&m, 297.0, 470.0, Isotope::N14).unwrap();
        let get = |n: &str| rows.iter().find(|r| r.name == n).unwrap().derivative;
        assert!((get("f4") + 232.8).abs() < 2.0);
        assert!(get("f3-f6").abs() < 0.01);
    }

    #[test]
    fn shared_field_offset_absorbs_n15_systematic() {
        let p = crate::presets::table1_params(Isotope::N15);
        let ms = MeasurementSet {
            temperature: 297.0,
            isotope: Isotope::N15,
            entries: reference_transitions(Isotope::N15)
                .iter()
                .map(|r| Measurement { label: r.name.parse().unwrap(), freq: r.value, sigma: r.value_sigma })
                .collect(),
            sample: None,
            nominal_bz: Some(470.0),
        };
        let fit = fit_axial_field(&p, 470.0, &ms).unwrap();
        assert!((fit.bz - 470.77).abs() < 0.05, "bz = {}", fit.bz);
        for r in &fit.residuals {
            assert!(r.residual.abs() < 0.05, "{:?}", r);
        }
    }
}

//! C ABI over `nvspin`.
//!
//! Every function returns an `NvStatus`; on failure the message is available
//! from `nv_last_error_message` on the same thread. Handles are opaque and
//! must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nvspin::eigen::eigh;
use nvspin::extraction::{extract_params, FitOptions, FitResult, Measurement, MeasurementSet, ParamVector, ThermalModels};
use nvspin::matrix::Matrix;
use nvspin::perturbation::{beta_coefficient, AngularTransition};
use nvspin::presets::table1_params;
use nvspin::ramsey::{fit_fringes_auto, RamseyTrace};
use nvspin::transitions::transition_set_with;
use nvspin::{CouplingParams, Error, FieldConfig, HamiltonianOptions, Isotope, TransitionLabel, TransitionSet};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    AmbiguousLabeling = 3,
    FitNoConvergence = 4,
    ValidityMargin = 5,
    Numerical = 6,
    Panic = 7,
}

pub const NV_ISOTOPE_N14: u32 = 14;
pub const NV_ISOTOPE_N15: u32 = 15;

fn parse_isotope(code: u32) -> Result<Isotope, Fail> {
    match code {
        NV_ISOTOPE_N14 => Ok(Isotope::N14),
        NV_ISOTOPE_N15 => Ok(Isotope::N15),
        other => Err(Error::InvalidInput(format!("isotope code {other}, expected 14 or 15")).into()),
    }
}

/// Plain copy of the coupling parameters, kHz and kHz/G.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvCouplingParams {
    pub d: f64,
    pub q: f64,
    pub a_par: f64,
    pub a_perp: f64,
    pub gamma_e: f64,
    pub gamma_n: f64,
}

impl From<CouplingParams> for NvCouplingParams {
    fn from(p: CouplingParams) -> Self {
        NvCouplingParams { d: p.d, q: p.q, a_par: p.a_par, a_perp: p.a_perp, gamma_e: p.gamma_e, gamma_n: p.gamma_n }
    }
}

impl From<NvCouplingParams> for CouplingParams {
    fn from(p: NvCouplingParams) -> Self {
        CouplingParams { d: p.d, q: p.q, a_par: p.a_par, a_perp: p.a_perp, gamma_e: p.gamma_e, gamma_n: p.gamma_n }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvRamseyResult {
    /// kHz, nonnegative
    pub delta: f64,
    /// s
    pub t2_star: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    pub rms_residual: f64,
}

/// Coupling parameters bound to an isotope.
pub struct NvParams {
    isotope: Isotope,
    params: CouplingParams,
}

pub struct NvTransitionSet {
    inner: TransitionSet,
    names: Vec<CString>,
}

pub struct NvFitResult {
    inner: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NvStatus {
    match e.root() {
        Error::AmbiguousLabeling(_) => NvStatus::AmbiguousLabeling,
        Error::FitNoConvergence(_) => NvStatus::FitNoConvergence,
        Error::ValidityMargin { .. } => NvStatus::ValidityMargin,
        Error::EigenNoConvergence { .. }
        | Error::NonFiniteObjective { .. }
        | Error::SingularDenominator(_)
        | Error::RankDeficient(_)
        | Error::NonIdentifiable(_) => NvStatus::Numerical,
        _ => NvStatus::InvalidInput,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            NvStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            NvStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            NvStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(v);
    Ok(())
}

/// Boxes `v` into `*out` only once `out` is known to be writable.
unsafe fn emit_handle<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    out.write(Box::into_raw(Box::new(v)));
    Ok(())
}

unsafe fn cstr<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidInput(format!("{what} is not UTF-8"))))
}

/// Message for the most recent failure on this thread; empty after success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn nv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reference parameters at 297 K.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn nv_params_preset(isotope: u32, out: *mut *mut NvParams) -> NvStatus {
    guard(|| {
        let iso = parse_isotope(isotope)?;
        emit_handle(out, NvParams { isotope: iso, params: table1_params(iso) })
    })
}

/// Reference temperature models evaluated at `temperature` (K).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn nv_params_at_temperature(isotope: u32, temperature: f64, out: *mut *mut NvParams) -> NvStatus {
    guard(|| {
        if !temperature.is_finite() || temperature <= 0.0 {
            return Err(Error::InvalidInput(format!("temperature {temperature} K")).into());
        }
        let iso = parse_isotope(isotope)?;
        let params = ThermalModels::from_preset(iso).params_at(temperature);
        emit_handle(out, NvParams { isotope: iso, params })
    })
}

/// Validated parameters from explicit values.
///
/// # Safety
/// `values` must point to one readable `NvCouplingParams`; `out` as for `nv_params_preset`.
#[no_mangle]
pub unsafe extern "C" fn nv_params_new(
    isotope: u32,
    values: *const NvCouplingParams,
    out: *mut *mut NvParams,
) -> NvStatus {
    guard(|| {
        let iso = parse_isotope(isotope)?;
        let params: CouplingParams = (*deref(values, "values")?).into();
        params.validate(&iso.spec())?;
        emit_handle(out, NvParams { isotope: iso, params })
    })
}

/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nv_params_get(params: *const NvParams, out: *mut NvCouplingParams) -> NvStatus {
    guard(|| {
        let p = deref(params, "params")?;
        write_out(out, p.params.into(), "out")
    })
}

/// # Safety
/// `params` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nv_params_free(params: *mut NvParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Labeled transitions by exact diagonalization at field (bz, bx) in G.
/// `transverse_nuclear_zeeman` = 0 drops the −γn·Bx·Ix term.
///
/// # Safety
/// `params` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nv_transitions_compute(
    params: *const NvParams,
    bz: f64,
    bx: f64,
    transverse_nuclear_zeeman: i32,
    out: *mut *mut NvTransitionSet,
) -> NvStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let opts = HamiltonianOptions { transverse_nuclear_zeeman: transverse_nuclear_zeeman != 0 };
        let inner = transition_set_with(&p.params, &FieldConfig::new(bz, bx), &p.isotope.spec(), opts)?;
        let names = inner
            .iter()
            .map(|t| CString::new(t.label.to_string()).expect("labels contain no NUL"))
            .collect();
        emit_handle(out, NvTransitionSet { inner, names })
    })
}

/// Number of transitions in the set; 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nv_transitions_len(set: *const NvTransitionSet) -> usize {
    set.as_ref().map_or(0, |s| s.inner.len())
}

/// Name and frequency (kHz) of entry `index`, in label order. The name
/// pointer lives as long as the set.
///
/// # Safety
/// `set` must be a live handle; `name` and `freq` writable or null.
#[no_mangle]
pub unsafe extern "C" fn nv_transitions_get(
    set: *const NvTransitionSet,
    index: usize,
    name: *mut *const c_char,
    freq: *mut f64,
) -> NvStatus {
    guard(|| {
        let s = deref(set, "set")?;
        let t = s
            .inner
            .iter()
            .nth(index)
            .ok_or_else(|| Error::InvalidInput(format!("index {index} out of range ({})", s.inner.len())))?;
        if !name.is_null() {
            name.write(s.names[index].as_ptr());
        }
        if !freq.is_null() {
            freq.write(t.freq);
        }
        Ok(())
    })
}

/// Frequency (kHz) of a transition by name, e.g. "f1", "fdq", "fplus_+1".
///
/// # Safety
/// `set` must be a live handle, `label` a NUL-terminated string, `freq` writable.
#[no_mangle]
pub unsafe extern "C" fn nv_transitions_frequency(
    set: *const NvTransitionSet,
    label: *const c_char,
    freq: *mut f64,
) -> NvStatus {
    guard(|| {
        let s = deref(set, "set")?;
        let l: TransitionLabel = cstr(label, "label")?.parse()?;
        write_out(freq, s.inner.require(l)?, "freq")
    })
}

/// # Safety
/// `set` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nv_transitions_free(set: *mut NvTransitionSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Eigen-decomposition of a symmetric n×n row-major matrix.
/// Eigenvalues ascend; column i of the row-major `eigenvectors` output pairs
/// with eigenvalue i. `eigenvectors` may be null.
///
/// # Safety
/// `matrix` must hold n·n doubles, `eigenvalues` n, `eigenvectors` n·n if non-null.
#[no_mangle]
pub unsafe extern "C" fn nv_eigh(n: usize, matrix: *const f64, eigenvalues: *mut f64, eigenvectors: *mut f64) -> NvStatus {
    guard(|| {
        if n == 0 {
            return Err(Error::InvalidInput("matrix dimension must be positive".into()).into());
        }
        let nn = n.checked_mul(n).ok_or_else(|| Error::InvalidInput("dimension overflow".into()))?;
        let data = slice(matrix, nn, "matrix")?;
        let m = Matrix::from_fn(n, |i, j| data[i * n + j]);
        let es = eigh(&m)?;
        slice_mut(eigenvalues, n, "eigenvalues")?.copy_from_slice(&es.eigenvalues);
        if !eigenvectors.is_null() {
            slice_mut(eigenvectors, nn, "eigenvectors")?.copy_from_slice(es.eigenvectors.as_slice());
        }
        Ok(())
    })
}

/// Quadratic misalignment coefficient for fDQ (14N) or f7 (15N) at axial
/// field `bz`, and the baseline frequency (kHz) it scales.
///
/// # Safety
/// `params` must be a live handle; `beta` writable; `baseline` writable or null.
#[no_mangle]
pub unsafe extern "C" fn nv_beta_coefficient(params: *const NvParams, bz: f64, beta: *mut f64, baseline: *mut f64) -> NvStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let r = beta_coefficient(&p.params, bz, AngularTransition::for_isotope(p.isotope))?;
        write_out(beta, r.beta, "beta")?;
        if !baseline.is_null() {
            baseline.write(r.baseline);
        }
        Ok(())
    })
}

/// Fits one temperature's lines. `labels[i]`, `freqs[i]` and `sigmas[i]`
/// (kHz) describe line i; `guess` and `bz` seed the search, `bx` is held fixed.
///
/// # Safety
/// Arrays must hold `n` entries; `labels` entries NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nv_fit_measurements(
    guess: *const NvParams,
    bz: f64,
    bx: f64,
    temperature: f64,
    labels: *const *const c_char,
    freqs: *const f64,
    sigmas: *const f64,
    n: usize,
    out: *mut *mut NvFitResult,
) -> NvStatus {
    guard(|| {
        let g = deref(guess, "guess")?;
        let labels = slice(labels, n, "labels")?;
        let freqs = slice(freqs, n, "freqs")?;
        let sigmas = slice(sigmas, n, "sigmas")?;
        let mut entries = Vec::with_capacity(n);
        for i in 0..n {
            let label: TransitionLabel = cstr(labels[i], "labels[i]")?.parse()?;
            entries.push(Measurement { label, freq: freqs[i], sigma: sigmas[i] });
        }
        let ms = MeasurementSet { temperature, isotope: g.isotope, entries, sample: None, nominal_bz: Some(bz) };
        let start = ParamVector::from_model(&g.params, &FieldConfig::new(bz, bx), g.isotope)?;
        let inner = extract_params(&ms, &start, &FitOptions::default())?;
        emit_handle(out, NvFitResult { inner })
    })
}

/// Number of fitted quantities (7 for 14N, 6 for 15N).
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nv_fit_param_count(fit: *const NvFitResult) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.params.to_vec().len())
}

/// Copies fitted values in the order D, γe·Bz, [Q,] A∥, A⊥, γe·Bx, γe/γn.
///
/// # Safety
/// `fit` must be a live handle and `values` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nv_fit_params(fit: *const NvFitResult, values: *mut f64, len: usize) -> NvStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        let v = f.inner.params.to_vec();
        if len < v.len() {
            return Err(Error::DimensionMismatch { expected: v.len(), found: len }.into());
        }
        slice_mut(values, v.len(), "values")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Fitted coupling parameters with γe fixed and γn from the fitted ratio.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nv_fit_coupling(fit: *const NvFitResult, out: *mut NvCouplingParams) -> NvStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        let (p, _) = f.inner.params.to_model(nvspin::spin::GAMMA_E)?;
        write_out(out, p.into(), "out")
    })
}

/// Weighted sum of squared residuals at the optimum.
///
/// # Safety
/// `fit` must be a live handle and `objective` writable.
#[no_mangle]
pub unsafe extern "C" fn nv_fit_objective(fit: *const NvFitResult, objective: *mut f64) -> NvStatus {
    guard(|| write_out(objective, deref(fit, "fit")?.inner.objective, "objective"))
}

/// # Safety
/// `fit` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nv_fit_free(fit: *mut NvFitResult) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Fits an exponentially damped cosine to a Ramsey trace (times in s).
///
/// # Safety
/// `times` and `signal` must hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nv_ramsey_fit(times: *const f64, signal: *const f64, n: usize, out: *mut NvRamseyResult) -> NvStatus {
    guard(|| {
        let trace = RamseyTrace {
            times: slice(times, n, "times")?.to_vec(),
            signal: slice(signal, n, "signal")?.to_vec(),
            noise_sigma: 0.0,
        };
        let fit = fit_fringes_auto(&trace)?;
        let p = fit.params;
        let r = NvRamseyResult {
            delta: p.delta,
            t2_star: p.t2_star,
            amplitude: p.amplitude,
            phase: p.phase,
            offset: p.offset,
            rms_residual: fit.rms_residual,
        };
        write_out(out, r, "out")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_out_reports_status() {
        let s = unsafe { nv_params_preset(NV_ISOTOPE_N14, ptr::null_mut()) };
        assert_eq!(s, NvStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(nv_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("out"));
    }

    #[test]
    fn success_clears_message() {
        let mut h = ptr::null_mut();
        unsafe {
            nv_params_preset(NV_ISOTOPE_N14, ptr::null_mut());
            assert_eq!(nv_params_preset(NV_ISOTOPE_N14, &mut h), NvStatus::Ok);
            assert_eq!(CStr::from_ptr(nv_last_error_message()).to_bytes().len(), 0);
            nv_params_free(h);
        }
    }

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::AmbiguousLabeling("x".into())), NvStatus::AmbiguousLabeling);
        let wrapped = Error::ObjectiveFailed { point: vec![], source: Box::new(Error::FitNoConvergence("x".into())) };
        assert_eq!(status_of(&wrapped), NvStatus::FitNoConvergence);
        assert_eq!(status_of(&Error::ValidityMargin { f_minus: 1.0, limit: 2.0 }), NvStatus::ValidityMargin);
    }
}

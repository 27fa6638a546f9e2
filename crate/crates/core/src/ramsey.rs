//! Ramsey fringe synthesis and fitting.
//!
//! Signal model, τ in seconds and δ in kHz:
//! `s(τ) = offset + amp·exp(−τ/T2*)·cos(2π·δ·τ + phase)`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, OptimOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamseyTrace {
    /// s, strictly increasing
    pub times: Vec<f64>,
    pub signal: Vec<f64>,
    pub noise_sigma: f64,
}

impl RamseyTrace {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.signal.len() {
            return Err(Error::DimensionMismatch { expected: self.times.len(), found: self.signal.len() });
        }
        if self.times.iter().chain(&self.signal).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite Ramsey sample".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("Ramsey times must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Mean sample spacing, s.
    pub fn mean_step(&self) -> f64 {
        let n = self.times.len();
        (self.times[n - 1] - self.times[0]) / (n - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseyParams {
    /// kHz
    pub delta: f64,
    /// s; may be infinite for no decay
    pub t2_star: f64,
    pub amplitude: f64,
    /// rad
    pub phase: f64,
    pub offset: f64,
}

impl RamseyParams {
    pub fn signal(&self, tau: f64) -> f64 {
        let envelope = if self.t2_star.is_infinite() { 1.0 } else { (-tau / self.t2_star).exp() };
        self.offset + self.amplitude * envelope * (2.0 * PI * self.delta * 1e3 * tau + self.phase).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseyFit {
    pub params: RamseyParams,
    pub rms_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Evenly spaced sample times `[0, duration)`.
pub fn uniform_times(n: usize, duration: f64) -> Vec<f64> {
    (0..n).map(|i| duration * i as f64 / n as f64).collect()
}

pub fn synthesize(params: &RamseyParams, times: &[f64], noise_sigma: f64, seed: u64) -> Result<RamseyTrace> {
    if !(params.t2_star > 0.0) {
        return Err(Error::InvalidInput(format!("T2* must be positive, got {}", params.t2_star)));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidInput("Ramsey times must be finite and nonnegative".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("noise sigma must be nonnegative, got {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let signal = times
        .iter()
        .map(|&t| {
            let s = params.signal(t);
            if noise_sigma > 0.0 {
                s + noise.sample(&mut rng)
            } else {
                s
            }
        })
        .collect();
    let trace = RamseyTrace { times: times.to_vec(), signal, noise_sigma };
    trace.validate()?;
    Ok(trace)
}

/// Minimum ratio of the spectral peak to the median spectral magnitude.
pub const PEAK_SIGNIFICANCE: f64 = 6.0;

/// Dominant fringe frequency in kHz from a zero-padded FFT with parabolic
/// peak interpolation. Assumes near-uniform sampling.
pub fn fft_peak_frequency(trace: &RamseyTrace) -> Result<f64> {
    trace.validate()?;
    let n = trace.times.len();
    if n < 8 {
        return Err(Error::InsufficientData(format!("{n} Ramsey samples")));
    }
    let dt = trace.mean_step();
    let mean = trace.signal.iter().sum::<f64>() / n as f64;
    let len = (8 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = trace
        .signal
        .iter()
        .map(|s| Complex::new(s - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let mag: Vec<f64> = buf[..len / 2].iter().map(|c| c.norm()).collect();
    let (k, peak) = mag
        .iter()
        .enumerate()
        .skip(1)
        .fold((0, 0.0), |best, (i, &m)| if m > best.1 { (i, m) } else { best });
    if !(peak > 0.0) {
        return Err(Error::NonIdentifiable("trace has no oscillating component".into()));
    }
    let mut sorted = mag[1..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    // white noise alone rarely lifts its largest bin above ~4× the median
    if peak < PEAK_SIGNIFICANCE * median {
        return Err(Error::NonIdentifiable(format!(
            "spectral peak {peak:.3e} is within {PEAK_SIGNIFICANCE}× the median level {median:.3e}"
        )));
    }
    let shift = if k + 1 < mag.len() {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        let denom = a - 2.0 * b + c;
        if denom != 0.0 {
            0.5 * (a - c) / denom
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok((k as f64 + shift) / (len as f64 * dt) / 1e3)
}

/// Offset, amplitude and phase by linear least squares at fixed δ and T2*.
fn linear_part(trace: &RamseyTrace, delta: f64, t2_star: f64) -> Result<(RamseyParams, f64)> {
    let w = 2.0 * PI * delta * 1e3;
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (&t, &y) in trace.times.iter().zip(&trace.signal) {
        let e = (-t / t2_star).exp();
        let row = [1.0, e * (w * t).cos(), e * (w * t).sin()];
        for r in 0..3 {
            aty[r] += row[r] * y;
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
        }
    }
    let x = solve3(ata, aty).ok_or_else(|| Error::NonIdentifiable("degenerate fringe basis".into()))?;
    // a·cos(wt) + b·sin(wt) = amp·cos(wt + phase) with amp cos φ = a, amp sin φ = −b
    let amplitude = x[1].hypot(x[2]);
    let phase = (-x[2]).atan2(x[1]);
    let p = RamseyParams { delta, t2_star, amplitude, phase, offset: x[0] };
    Ok((p, weight_sum(trace, t2_star)))
}

fn weight_sum(trace: &RamseyTrace, t2_star: f64) -> f64 {
    trace.times.iter().map(|t| (-2.0 * t / t2_star).exp()).sum()
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in (col + 1)..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = ((r + 1)..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Starting point from the FFT peak, a decay time of half the record and a
/// linear solve for offset, amplitude and phase.
pub fn initial_guess(trace: &RamseyTrace) -> Result<RamseyParams> {
    let delta = fft_peak_frequency(trace)?;
    let span = trace.times[trace.times.len() - 1] - trace.times[0];
    Ok(linear_part(trace, delta, 0.5 * span.max(f64::MIN_POSITIVE))?.0)
}

fn rms(trace: &RamseyTrace, p: &RamseyParams) -> f64 {
    let ss: f64 = trace.times.iter().zip(&trace.signal).map(|(t, y)| (p.signal(*t) - y).powi(2)).sum();
    (ss / trace.times.len() as f64).sqrt()
}

fn wrap_phase(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Nelder-Mead fit of all five model parameters, starting from `guess`.
pub fn fit_fringes(trace: &RamseyTrace, guess: &RamseyParams) -> Result<RamseyFit> {
    trace.validate()?;
    let n = trace.times.len();
    if n < 8 {
        return Err(Error::InsufficientData(format!("{n} Ramsey samples")));
    }
    if !(guess.delta.abs() > 0.0 && guess.delta.is_finite()) {
        return Err(Error::InvalidInput(format!("guess detuning must be nonzero, got {}", guess.delta)));
    }
    let period = 1.0 / (guess.delta.abs() * 1e3);
    let per_period = period / trace.mean_step();
    if per_period < 4.0 {
        return Err(Error::InvalidInput(format!(
            "undersampled trace: {per_period:.2} samples per period at {} kHz (need >= 4)",
            guess.delta.abs()
        )));
    }
    let t2 = if guess.t2_star.is_finite() && guess.t2_star > 0.0 {
        guess.t2_star
    } else {
        trace.times[n - 1] - trace.times[0]
    };

    let unpack = |x: &[f64]| RamseyParams {
        delta: x[0],
        t2_star: x[1].exp(),
        amplitude: x[2],
        phase: x[3],
        offset: x[4],
    };
    let objective = |x: &[f64]| -> Result<f64> {
        let p = unpack(x);
        Ok(trace.times.iter().zip(&trace.signal).map(|(t, y)| (p.signal(*t) - y).powi(2)).sum())
    };
    let opts = OptimOptions::default();
    let mut x = vec![guess.delta, t2.ln(), guess.amplitude, guess.phase, guess.offset];
    let mut best = objective(&x)?;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..8 {
        let r = nelder_mead(objective, &x, &opts)?;
        iterations += r.iterations;
        converged = r.converged;
        let improvement = best - r.f_min;
        if r.f_min <= best {
            x = r.x_min;
            best = r.f_min;
        }
        if converged && improvement <= 1e-9 * best + 1e-24 {
            break;
        }
    }
    if !converged {
        return Err(Error::FitNoConvergence(format!("Ramsey fit stopped after {iterations} iterations")));
    }

    let mut p = unpack(&x);
    if p.amplitude < 0.0 {
        p.amplitude = -p.amplitude;
        p.phase += PI;
    }
    if p.delta < 0.0 {
        p.delta = -p.delta;
        p.phase = -p.phase;
    }
    p.phase = wrap_phase(p.phase);
    let rms_residual = rms(trace, &p);

    // amplitude standard error scale for uncorrelated residuals
    let se = rms_residual * (2.0 / weight_sum(trace, p.t2_star)).sqrt();
    let scale = trace.signal.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    if p.amplitude <= 5.0 * se || p.amplitude <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NonIdentifiable(format!(
            "fitted amplitude {:.3e} is not significant (standard error {se:.3e})",
            p.amplitude
        )));
    }
    Ok(RamseyFit { params: p, rms_residual, converged, iterations })
}

/// FFT-initialized fit.
pub fn fit_fringes_auto(trace: &RamseyTrace) -> Result<RamseyFit> {
    let guess = initial_guess(trace)?;
    fit_fringes(trace, &guess)
}

/// Transition frequency from the drive frequency and fitted detuning magnitude.
pub fn frequency_from_detuning(f_rf: f64, delta: f64, sign: f64) -> f64 {
    f_rf - sign * delta
}

/// Sign of `f_rf − f` from fitted detunings at two drive frequencies.
pub fn resolve_detuning_sign(f_rf1: f64, delta1: f64, f_rf2: f64, delta2: f64) -> Result<f64> {
    let step = f_rf2 - f_rf1;
    let change = delta2 - delta1;
    if step == 0.0 || change == 0.0 {
        return Err(Error::NonIdentifiable("detuning did not change between drive frequencies".into()));
    }
    // |δ| follows the drive when it sits above the line and opposes it below
    Ok((change * step).signum())
}

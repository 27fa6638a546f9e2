//! Derivative-free minimization and weighted least-squares helpers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    /// Initial simplex step as a fraction of each coordinate.
    pub initial_simplex_scale: f64,
    /// Step used for coordinates that are exactly zero.
    pub zero_step: f64,
    /// Relative spread of objective values across the simplex.
    pub tol_f: f64,
    /// Relative spread of vertices around the best vertex.
    pub tol_x: f64,
    pub max_iter: usize,
    pub record_history: bool,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            initial_simplex_scale: 1e-3,
            zero_step: 1e-3,
            tol_f: 1e-12,
            tol_x: 1e-10,
            max_iter: 20_000,
            record_history: false,
        }
    }
}

impl OptimOptions {
    fn validate(&self) -> Result<()> {
        let positive = [self.initial_simplex_scale, self.zero_step, self.tol_f, self.tol_x];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.max_iter == 0 {
            return Err(Error::InvalidInput(format!("optimizer options must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x_min: Vec<f64>,
    pub f_min: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective after each iteration, when requested.
    pub history: Option<Vec<f64>>,
    pub final_simplex: Vec<Vec<f64>>,
    pub final_values: Vec<f64>,
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        self.evaluations += 1;
        match (self.f)(x) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(Error::NonFiniteObjective { value: v, point: x.to_vec() }),
            Err(e) => Err(Error::ObjectiveFailed { point: x.to_vec(), source: Box::new(e) }),
        }
    }
}

/// Nelder-Mead simplex minimization with reflection 1, expansion 2,
/// contraction 0.5 and shrink 0.5.
pub fn nelder_mead<F>(objective: F, x0: &[f64], opts: &OptimOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    opts.validate()?;
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty parameter vector".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite start point {x0:?}")));
    }
    let mut obj = Counted { f: objective, evaluations: 0 };

    let mut simplex = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if x0[i] != 0.0 { opts.initial_simplex_scale * x0[i] } else { opts.zero_step };
        simplex.push(v);
    }
    let mut values = Vec::with_capacity(n + 1);
    for v in &simplex {
        values.push(obj.eval(v)?);
    }

    let mut history = opts.record_history.then(Vec::new);
    let mut iterations = 0;
    let mut converged = false;

    loop {
        sort_simplex(&mut simplex, &mut values);
        if let Some(h) = history.as_mut() {
            h.push(values[0]);
        }
        if is_converged(&simplex, &values, opts) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let along = |c: f64| -> Vec<f64> {
            centroid.iter().zip(&worst).map(|(m, w)| m + c * (m - w)).collect()
        };

        let xr = along(1.0);
        let fr = obj.eval(&xr)?;
        if fr < values[0] {
            let xe = along(2.0);
            let fe = obj.eval(&xe)?;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        // contraction: outside if the reflected point beats the worst vertex
        let (xc, fc, accept) = if fr < values[n] {
            let xc = along(0.5);
            let fc = obj.eval(&xc)?;
            (xc, fc, fc <= fr)
        } else {
            let xc = along(-0.5);
            let fc = obj.eval(&xc)?;
            (xc, fc, fc < values[n])
        };
        if accept {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            let shrunk: Vec<f64> = best.iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            values[i] = obj.eval(&shrunk)?;
            simplex[i] = shrunk;
        }
    }

    Ok(OptimResult {
        x_min: simplex[0].clone(),
        f_min: values[0],
        iterations,
        evaluations: obj.evaluations,
        converged,
        history,
        final_simplex: simplex,
        final_values: values,
    })
}

fn sort_simplex(simplex: &mut Vec<Vec<f64>>, values: &mut Vec<f64>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // stable: ties keep the older vertex first
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    *simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
    *values = idx.iter().map(|&i| values[i]).collect();
}

fn is_converged(simplex: &[Vec<f64>], values: &[f64], opts: &OptimOptions) -> bool {
    let (lo, hi) = (values[0], values[values.len() - 1]);
    if hi - lo <= opts.tol_f * lo.abs() {
        return true;
    }
    let best = &simplex[0];
    simplex[1..].iter().all(|v| {
        v.iter().zip(best).all(|(x, b)| (x - b).abs() <= opts.tol_x * b.abs().max(1.0))
    })
}

/// `Σ((model − measured)/σ)²`.
pub fn weighted_objective(model: &[f64], measured: &[f64], sigmas: &[f64]) -> Result<f64> {
    if model.len() != measured.len() || model.len() != sigmas.len() {
        return Err(Error::DimensionMismatch { expected: measured.len(), found: model.len().max(sigmas.len()) });
    }
    let mut s = 0.0;
    for ((m, y), sg) in model.iter().zip(measured).zip(sigmas) {
        if !(*sg > 0.0) || !sg.is_finite() {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {sg}")));
        }
        s += ((m - y) / sg).powi(2);
    }
    Ok(s)
}

/// Polynomial in `(T − T₀)` with coefficients `c₀…c_d` (kHz/Kᵏ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModel {
    pub coefficients: Vec<f64>,
    pub t0: f64,
    pub rms_residual: f64,
}

impl PolynomialModel {
    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    pub fn value(&self, t: f64) -> f64 {
        let x = t - self.t0;
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// `order`-th derivative at `t`.
    pub fn derivative(&self, t: f64, order: usize) -> f64 {
        let x = t - self.t0;
        let mut acc = 0.0;
        for (k, c) in self.coefficients.iter().enumerate().skip(order).rev() {
            let falling: f64 = ((k - order + 1)..=k).map(|j| j as f64).product();
            acc = acc * x + c * falling;
        }
        acc
    }

    /// First derivative over value, in ppm/K.
    pub fn fractional_derivative_ppm(&self, t: f64) -> f64 {
        1e6 * self.derivative(t, 1) / self.value(t)
    }
}

/// Weighted least-squares polynomial fit on the basis `(x − t0)ᵏ`.
pub fn polyfit_weighted(x: &[f64], y: &[f64], sigma: &[f64], degree: usize, t0: f64) -> Result<PolynomialModel> {
    let m = degree + 1;
    if x.len() != y.len() || x.len() != sigma.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len().max(sigma.len()) });
    }
    if x.len() < m {
        return Err(Error::InsufficientData(format!("{} points for degree {degree}", x.len())));
    }
    let all = x.iter().chain(y).chain(sigma).chain(std::iter::once(&t0));
    if all.clone().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite polynomial fit input".into()));
    }
    if sigma.iter().any(|s| *s <= 0.0) {
        return Err(Error::InvalidInput("sigma must be positive".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < m {
        return Err(Error::RankDeficient(format!(
            "{} distinct temperatures for degree {degree}",
            sorted.len()
        )));
    }

    // column scaling keeps the normal matrix well conditioned
    let span = x.iter().map(|v| (v - t0).abs()).fold(0.0, f64::max).max(1.0);
    let basis = |xi: f64| -> Vec<f64> {
        let u = (xi - t0) / span;
        (0..m).map(|k| u.powi(k as i32)).collect()
    };
    let mut ata = vec![vec![0.0; m]; m];
    let mut aty = vec![0.0; m];
    for ((xi, yi), si) in x.iter().zip(y).zip(sigma) {
        let w = 1.0 / (si * si);
        let b = basis(*xi);
        for r in 0..m {
            aty[r] += w * b[r] * yi;
            for c in 0..m {
                ata[r][c] += w * b[r] * b[c];
            }
        }
    }
    let scaled = solve_spd(ata, aty)?;
    let coefficients: Vec<f64> = scaled.iter().enumerate().map(|(k, c)| c / span.powi(k as i32)).collect();

    let mut model = PolynomialModel { coefficients, t0, rms_residual: 0.0 };
    let ss: f64 = x.iter().zip(y).map(|(xi, yi)| (model.value(*xi) - yi).powi(2)).sum();
    model.rms_residual = (ss / x.len() as f64).sqrt();
    Ok(model)
}

/// Inverse of a symmetric positive-definite matrix.
pub(crate) fn invert_spd(a: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let e: Vec<f64> = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
        cols.push(solve_spd(a.clone(), e)?);
    }
    Ok((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

/// Cholesky solve of a symmetric positive-definite system.
fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 1e-13 * scale) {
            return Err(Error::RankDeficient(format!("normal matrix pivot {d:e} at column {j}")));
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in (j + 1)..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..n {
        for k in 0..i {
            b[i] -= a[i][k] * b[k];
        }
        b[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            b[i] -= a[k][i] * b[k];
        }
        b[i] /= a[i][i];
    }
    Ok(b)
}

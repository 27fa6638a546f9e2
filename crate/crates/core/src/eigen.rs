//! Symmetric eigendecomposition by the cyclic Jacobi method.
//!
//! Jacobi rotations update each diagonal entry by a correction proportional
//! to the annihilated off-diagonal element, so eigenvalues that are small
//! compared to the matrix norm keep an absolute error close to their own
//! rounding level. Nuclear transition frequencies are differences of such
//! eigenvalues and depend on this.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Relative symmetry tolerance accepted on input.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// Off-diagonal Frobenius norm threshold relative to the input norm.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Matrix,
    pub sweeps: usize,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.column(i)
    }
}

/// Decomposes a real symmetric matrix.
///
/// Output is deterministic: rotations follow a fixed row-major sweep order,
/// eigenpairs are sorted by ascending eigenvalue (ties keep sweep order), and
/// each eigenvector is signed so its largest-magnitude component is positive.
pub fn eigh(m: &Matrix) -> Result<EigenSystem> {
    let n = m.dim();
    let scale = m.norm_inf();
    if m.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix contains non-finite entries".into()));
    }
    let asym = m.max_asymmetry();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::Asymmetric { asymmetry: asym });
    }

    // work on the symmetrized upper triangle
    let mut a = Matrix::from_fn(n, |i, j| if i <= j { m[(i, j)] } else { m[(j, i)] });
    let mut v = Matrix::identity(n);
    let threshold = CONVERGENCE_THRESHOLD * a.norm_frobenius();

    let mut sweeps = 0;
    let mut converged_once = false;
    loop {
        let off = off_diagonal_norm(&a);
        if off == 0.0 || (off <= threshold && converged_once) {
            break;
        }
        if off <= threshold {
            // one polishing sweep past the threshold
            converged_once = true;
        }
        if sweeps == MAX_SWEEPS {
            if converged_once {
                break;
            }
            return Err(Error::EigenNoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));

    let eigenvalues = order.iter().map(|&k| a[(k, k)]).collect();
    let mut eigenvectors = Matrix::zeros(n);
    for (col, &k) in order.iter().enumerate() {
        let mut pivot = 0;
        for r in 0..n {
            if v[(r, k)].abs() > v[(pivot, k)].abs() {
                pivot = r;
            }
        }
        let sign = if v[(pivot, k)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            eigenvectors[(r, col)] = sign * v[(r, k)];
        }
    }

    Ok(EigenSystem { eigenvalues, eigenvectors, sweeps })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.dim();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += 2.0 * a[(i, j)] * a[(i, j)];
        }
    }
    s.sqrt()
}

fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.dim();
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let tau = s / (1.0 + c);
    let h = t * apq;

    a[(p, p)] -= h;
    a[(q, q)] += h;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let g = a[(r, p)];
        let hh = a[(r, q)];
        let rp = g - s * (hh + g * tau);
        let rq = hh + s * (g - hh * tau);
        a[(r, p)] = rp;
        a[(p, r)] = rp;
        a[(r, q)] = rq;
        a[(q, r)] = rq;
    }
    for r in 0..n {
        let g = v[(r, p)];
        let hh = v[(r, q)];
        v[(r, p)] = g - s * (hh + g * tau);
        v[(r, q)] = hh + s * (g - hh * tau);
    }
}

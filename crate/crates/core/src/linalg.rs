//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative jitter levels tried after a plain factorization fails.
pub const JITTER_LEVELS: [f64; 7] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky factorization, retrying with diagonal loading `level * mean(diag)`
/// for each of [`JITTER_LEVELS`]. Returns the factor and the absolute jitter
/// that was applied.
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, 0.0));
    }
    let n = a.nrows().max(1) as f64;
    let scale = (a.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n).max(f64::MIN_POSITIVE);
    for level in JITTER_LEVELS {
        let jitter = level * scale;
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(b) {
            log::debug!("cholesky succeeded with jitter {jitter:e}");
            return Ok((c, jitter));
        }
    }
    Err(Error::Factorization(format!(
        "matrix of order {} is not positive definite even with jitter",
        a.nrows()
    )))
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

fn rank_tolerance(a: &DMatrix<f64>, smax: f64) -> f64 {
    a.nrows().max(a.ncols()) as f64 * f64::EPSILON * smax
}

/// Minimum-norm least-squares solution of `a x = b` (pseudoinverse semantics).
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return DVector::zeros(a.ncols());
    }
    let tol = rank_tolerance(a, smax);
    svd.solve(b, tol).expect("u and v were computed")
}

/// Moore-Penrose pseudoinverse.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DMatrix::zeros(a.ncols(), a.nrows());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(a.ncols(), a.nrows());
    }
    let tol = rank_tolerance(a, smax);
    svd.pseudo_inverse(tol).expect("u and v were computed")
}

/// Largest eigenvalue of `aᵀa` (squared spectral norm) by power iteration.
pub fn largest_sq_singular_value(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    // Deterministic perturbation avoids starting orthogonal to the top vector.
    for (i, vi) in v.iter_mut().enumerate() {
        *vi += 1e-3 * ((i as f64 + 1.0) * 0.618_033_988_75).fract();
    }
    v.normalize_mut();
    let mut est = 0.0;
    for _ in 0..1000 {
        let w = a.tr_mul(&(a * &v));
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - est).abs() <= 1e-12 * next.abs() {
            est = next;
            break;
        }
        est = next;
    }
    // Power iteration approaches from below; pad slightly so the derived step
    // size stays valid.
    est * (1.0 + 1e-9)
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Trapezoidal rule for samples `y` on abscissae `x`.
pub fn trapz(y: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(y.len(), x.len());
    y.windows(2)
        .zip(x.windows(2))
        .map(|(yy, xx)| 0.5 * (yy[0] + yy[1]) * (xx[1] - xx[0]))
        .sum()
}

/// Non-negative least squares `min ‖a x − b‖² s.t. x ≥ 0` (Lawson-Hanson).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let mut passive = vec![false; n];
    let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tol = 10.0 * f64::EPSILON * scale.max(f64::MIN_POSITIVE) * (a.nrows().max(n) as f64);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(&idx);
        let gram = sub.tr_mul(&sub);
        let rhs = sub.tr_mul(b);
        let z = gram
            .clone()
            .lu()
            .solve(&rhs)
            .filter(|z| z.iter().all(|v| v.is_finite()))
            .unwrap_or_else(|| min_norm_lstsq(&sub, b));
        let mut full = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = z[k];
        }
        full
    };
    for _outer in 0..(3 * n + 10) {
        let w = a.tr_mul(&(b - a * &x));
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        for _inner in 0..(3 * n + 10) {
            let z = solve_passive(&passive);
            if (0..n).filter(|&k| passive[k]).all(|k| z[k] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for k in 0..n {
                if passive[k] && z[k] <= 0.0 {
                    let denom = x[k] - z[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[k] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x = &x + (&z - &x) * alpha;
            for k in 0..n {
                if passive[k] && x[k] <= tol.max(1e-300) {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
        }
    }
    x
}

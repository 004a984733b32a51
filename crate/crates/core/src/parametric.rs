//! Linear parametric power maps `p(x) = Σ_b α_b ψ_b(x)`: least squares over
//! a known basis and Lasso-based transmitter discovery on a grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimator::MapEstimator;
use crate::geometry::{Grid, Location, Region, Unit};
use crate::linalg::{largest_sq_singular_value, min_norm_lstsq, soft_threshold};
use crate::measurement::MeasurementSet;

/// Coefficients with magnitude below this are treated as zero.
pub const SUPPORT_THRESHOLD: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisFunction {
    /// `1 / max(‖x − tx‖, d_min)^exponent`
    Friis { tx: Location, exponent: f64, d_min: f64 },
    /// `t^power` with `t` the first coordinate mapped from `[lo, hi]` to `[−1, 1]`.
    Monomial { power: u32, lo: f64, hi: f64 },
}

impl BasisFunction {
    pub fn eval(&self, x: &Location) -> f64 {
        match self {
            BasisFunction::Friis { tx, exponent, d_min } => 1.0 / tx.distance(x).max(*d_min).powf(*exponent),
            BasisFunction::Monomial { power, lo, hi } => {
                let t = 2.0 * (x.get(0) - lo) / (hi - lo) - 1.0;
                t.powi(*power as i32)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    functions: Vec<BasisFunction>,
    labels: Vec<String>,
}

impl BasisSet {
    pub fn new(functions: Vec<BasisFunction>, labels: Vec<String>) -> Result<Self> {
        if functions.len() != labels.len() {
            return invalid("one label per basis function is required");
        }
        Ok(Self { functions, labels })
    }

    pub fn functions(&self) -> &[BasisFunction] {
        &self.functions
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Row n is `[ψ_1(x_n), …, ψ_B(x_n)]`.
    pub fn design_matrix(&self, locations: &[Location]) -> DMatrix<f64> {
        DMatrix::from_fn(locations.len(), self.len(), |n, b| self.functions[b].eval(&locations[n]))
    }
}

/// One inverse-power basis function per transmitter location.
pub fn friis_basis(tx_locations: &[Location], exponent: f64, d_min: f64) -> Result<BasisSet> {
    if tx_locations.is_empty() {
        return invalid("at least one transmitter location is required");
    }
    if !(d_min > 0.0) || !exponent.is_finite() {
        return invalid("distance floor must be positive and exponent finite");
    }
    let functions = tx_locations
        .iter()
        .map(|tx| BasisFunction::Friis { tx: *tx, exponent, d_min })
        .collect();
    let labels = (0..tx_locations.len()).map(|i| format!("tx{i}")).collect();
    BasisSet::new(functions, labels)
}

/// Monomials of degree `0..=degree` on a 1D region.
pub fn polynomial_basis(degree: u32, region: &Region) -> Result<BasisSet> {
    if region.dim() != 1 {
        return invalid("polynomial basis requires a 1D region");
    }
    let (lo, hi) = (region.lower().get(0), region.upper().get(0));
    if hi <= lo {
        return invalid("polynomial basis requires a region of positive length");
    }
    let functions = (0..=degree).map(|power| BasisFunction::Monomial { power, lo, hi }).collect();
    let labels = (0..=degree).map(|p| format!("x^{p}")).collect();
    BasisSet::new(functions, labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearMapEstimate {
    pub basis: BasisSet,
    pub coefficients: Vec<f64>,
    pub unit: Unit,
    /// The solver met its tolerance.
    pub converged: bool,
    /// The design matrix was identically zero.
    pub degenerate: bool,
    pub iterations: usize,
}

impl LinearMapEstimate {
    /// Indices of coefficients above [`SUPPORT_THRESHOLD`] in magnitude.
    pub fn support(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, a)| a.abs() > SUPPORT_THRESHOLD)
            .map(|(i, _)| i)
            .collect()
    }
}

impl MapEstimator for LinearMapEstimate {
    fn evaluate(&self, loc: &Location) -> f64 {
        self.basis
            .functions
            .iter()
            .zip(&self.coefficients)
            .map(|(f, a)| a * f.eval(loc))
            .sum()
    }

    fn unit(&self) -> Unit {
        self.unit
    }
}

/// Minimum-norm least squares fit of the basis coefficients.
pub fn fit_ls(basis: &BasisSet, data: &MeasurementSet) -> Result<LinearMapEstimate> {
    if data.is_empty() {
        return invalid("least squares needs at least one measurement");
    }
    let psi = basis.design_matrix(&data.locations());
    let m = DVector::from_vec(data.values());
    let degenerate = psi.iter().all(|v| *v == 0.0);
    if degenerate {
        log::warn!("all-zero design matrix; returning zero coefficients");
    }
    let alpha = if degenerate { DVector::zeros(basis.len()) } else { min_norm_lstsq(&psi, &m) };
    Ok(LinearMapEstimate {
        basis: basis.clone(),
        coefficients: alpha.iter().copied().collect(),
        unit: data.unit(),
        converged: true,
        degenerate,
        iterations: 0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoSolution {
    pub alpha: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub fn lasso_objective(psi: &DMatrix<f64>, m: &DVector<f64>, lambda: f64, alpha: &DVector<f64>) -> f64 {
    (m - psi * alpha).norm_squared() + lambda * alpha.lp_norm(1)
}

/// `argmin ‖m − Ψα‖² + λ‖α‖₁` by accelerated proximal gradient with
/// backtracking and objective-based restart. Stops when the gradient mapping
/// falls below `1e-8 · max(1, ‖2Ψᵀm‖∞)` or after `max_iter` iterations.
pub fn lasso(psi: &DMatrix<f64>, m: &DVector<f64>, lambda: f64, max_iter: usize) -> Result<LassoSolution> {
    const TOL: f64 = 1e-8;
    if !(lambda >= 0.0) {
        return invalid("lasso weight must be non-negative");
    }
    if psi.nrows() != m.len() {
        return invalid("design matrix rows must match measurement count");
    }
    let n = psi.ncols();
    let mut x = DVector::zeros(n);
    let mut lip = 2.0 * largest_sq_singular_value(psi);
    if lip == 0.0 {
        return Ok(LassoSolution { alpha: x, converged: true, iterations: 0 });
    }
    let scale = (2.0 * psi.tr_mul(m)).amax().max(1.0);
    let smooth = |a: &DVector<f64>| (m - psi * a).norm_squared();
    let grad = |a: &DVector<f64>| 2.0 * psi.tr_mul(&(psi * a - m));
    let prox = |v: DVector<f64>, t: f64| v.map(|vi| soft_threshold(vi, t));

    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut obj = lasso_objective(psi, m, lambda, &x);
    for it in 1..=max_iter {
        let gz = grad(&z);
        let fz = smooth(&z);
        let next = loop {
            let cand = prox(&z - &gz * (1.0 / lip), lambda / lip);
            let diff = &cand - &z;
            if smooth(&cand) <= fz + gz.dot(&diff) + 0.5 * lip * diff.norm_squared() * (1.0 + 1e-12) + 1e-300 {
                break cand;
            }
            lip *= 2.0;
        };
        let next_obj = lasso_objective(psi, m, lambda, &next);
        if next_obj > obj {
            z = x.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &x) * ((t - 1.0) / t_next);
        t = t_next;
        x = next;
        obj = next_obj;
        let mapping = (&x - prox(&x - grad(&x) * (1.0 / lip), lambda / lip)) * lip;
        if mapping.amax() <= TOL * scale {
            return Ok(LassoSolution { alpha: x, converged: true, iterations: it });
        }
    }
    Ok(LassoSolution { alpha: x, converged: false, iterations: max_iter })
}

/// Sparse transmitter discovery: a Friis basis function at every grid point,
/// fitted by Lasso. The support marks estimated transmitter cells.
///
/// Columns are scaled to unit norm before solving and the coefficients are
/// mapped back, so `λ` weighs every candidate cell equally regardless of its
/// distance to the sensors.
pub fn fit_lasso(grid: &Grid, data: &MeasurementSet, lambda: f64, exponent: f64, d_min: f64) -> Result<LinearMapEstimate> {
    if data.is_empty() {
        return invalid("lasso needs at least one measurement");
    }
    let basis = friis_basis(&grid.points(), exponent, d_min)?;
    let mut psi = basis.design_matrix(&data.locations());
    let norms: Vec<f64> = psi.column_iter().map(|c| c.norm()).collect();
    for (mut c, &n) in psi.column_iter_mut().zip(&norms) {
        if n > 0.0 {
            c /= n;
        }
    }
    let m = DVector::from_vec(data.values());
    let sol = lasso(&psi, &m, lambda, 100_000)?;
    if !sol.converged {
        log::warn!("lasso stopped after {} iterations without converging", sol.iterations);
    }
    let coefficients = sol.alpha.iter().zip(&norms).map(|(a, &n)| if n > 0.0 { a / n } else { 0.0 }).collect();
    Ok(LinearMapEstimate {
        basis,
        coefficients,
        unit: data.unit(),
        converged: sol.converged,
        degenerate: norms.iter().all(|n| *n == 0.0),
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(points: &[(f64, f64)]) -> MeasurementSet {
        let p: Vec<(Location, f64)> = points.iter().map(|&(x, v)| (Location::x(x), v)).collect();
        MeasurementSet::from_points(&p, 0.0, Unit::Watts).unwrap()
    }

    #[test]
    fn friis_values() {
        let b = friis_basis(&[Location::x(0.0)], 2.0, 1e-3).unwrap();
        assert_eq!(b.functions()[0].eval(&Location::x(2.0)), 0.25);
        let b4 = friis_basis(&[Location::x(0.0)], 4.0, 1e-3).unwrap();
        assert_eq!(b4.functions()[0].eval(&Location::x(2.0)), 0.0625);
        let b3 = friis_basis(&[Location::x(0.0), Location::x(1.0), Location::x(2.0)], 2.0, 1e-3).unwrap();
        assert_eq!(b3.len(), 3);
        assert!(friis_basis(&[], 2.0, 1.0).is_err());
    }

    #[test]
    fn polynomial_rescaling() {
        let r = Region::interval(0.0, 10.0).unwrap();
        let b0 = polynomial_basis(0, &r).unwrap();
        assert_eq!(b0.functions()[0].eval(&Location::x(3.7)), 1.0);
        let b = polynomial_basis(13, &r).unwrap();
        assert_eq!(b.len(), 14);
        assert_eq!(b.functions()[1].eval(&Location::x(10.0)), 1.0);
        assert_eq!(b.functions()[1].eval(&Location::x(0.0)), -1.0);
        assert!(polynomial_basis(2, &Region::rect(0.0, 0.0, 1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn single_tx_ls() {
        let b = friis_basis(&[Location::x(0.0)], 2.0, 1e-3).unwrap();
        let est = fit_ls(&b, &set(&[(2.0, 0.25)])).unwrap();
        assert!((est.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((est.evaluate(&Location::x(1.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_tx_recovery() {
        let b = friis_basis(&[Location::x(0.0), Location::x(10.0)], 2.0, 1e-3).unwrap();
        let xs = [1.0, 3.0, 4.5, 6.0, 8.5];
        let data: Vec<(f64, f64)> =
            xs.iter().map(|&x| (x, 1.0 / (x * x) + 2.0 / ((10.0 - x) * (10.0 - x)))).collect();
        let est = fit_ls(&b, &set(&data)).unwrap();
        assert!((est.coefficients[0] - 1.0).abs() < 1e-9);
        assert!((est.coefficients[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_data_and_zero_design() {
        let b = friis_basis(&[Location::x(0.0)], 2.0, 1e-3).unwrap();
        let est = fit_ls(&b, &set(&[(1.0, 0.0), (2.0, 0.0)])).unwrap();
        assert_eq!(est.coefficients, vec![0.0]);
        assert!(!est.degenerate);
        // Exponent so large the design underflows to zero.
        let far = friis_basis(&[Location::x(0.0)], 400.0, 1e-3).unwrap();
        let est = fit_ls(&far, &set(&[(50.0, 1.0)])).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.coefficients, vec![0.0]);
        assert_eq!(est.evaluate(&Location::x(3.0)), 0.0);
    }

    #[test]
    fn lasso_degenerate_cases() {
        let psi = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.2, 1.5, 0.4, 0.0, 0.3, 1.8]);
        let m = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let ls = psi.clone().lu().solve(&m).unwrap();
        let sol = lasso(&psi, &m, 0.0, 100_000).unwrap();
        assert!(sol.converged);
        assert!((sol.alpha - ls).amax() < 1e-7);
        let kill = 2.0 * psi.tr_mul(&m).amax();
        let sol = lasso(&psi, &m, kill, 100_000).unwrap();
        assert!(sol.alpha.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ls_residual_orthogonal() {
        let r = Region::interval(0.0, 10.0).unwrap();
        let b = polynomial_basis(3, &r).unwrap();
        let data: Vec<(f64, f64)> = (0..12).map(|i| (i as f64 * 0.8, (i as f64).sin())).collect();
        let s = set(&data);
        let est = fit_ls(&b, &s).unwrap();
        let psi = b.design_matrix(&s.locations());
        let res = DVector::from_vec(s.values()) - &psi * DVector::from_vec(est.coefficients.clone());
        assert!(psi.tr_mul(&res).amax() < 1e-8);
    }

    proptest! {
        #[test]
        fn ls_is_optimal_under_probes(vals in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let r = Region::interval(0.0, 10.0).unwrap();
            let b = polynomial_basis(2, &r).unwrap();
            let data: Vec<(f64, f64)> = vals.iter().enumerate().map(|(i, v)| (1.0 + i as f64 * 1.5, *v)).collect();
            let s = set(&data);
            let est = fit_ls(&b, &s).unwrap();
            let psi = b.design_matrix(&s.locations());
            let m = DVector::from_vec(s.values());
            let a = DVector::from_vec(est.coefficients.clone());
            let base = (&m - &psi * &a).norm_squared();
            for k in 0..3 {
                for d in [-1e-3, 1e-3] {
                    let mut p = a.clone();
                    p[k] += d;
                    prop_assert!((&m - &psi * &p).norm_squared() >= base - 1e-12);
                }
            }
        }

        #[test]
        fn lasso_shrinks_with_lambda(l1 in 1e-4f64..1e-1, factor in 1.1f64..10.0) {
            let psi = DMatrix::from_fn(6, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 / 7.0 + if i == j { 1.0 } else { 0.0 });
            let m = DVector::from_fn(6, |i, _| (i as f64 * 0.7).cos());
            let a1 = lasso(&psi, &m, l1, 100_000).unwrap().alpha;
            let a2 = lasso(&psi, &m, l1 * factor, 100_000).unwrap().alpha;
            prop_assert!(a2.lp_norm(1) <= a1.lp_norm(1) + 1e-7);
            let zero = DVector::zeros(4);
            prop_assert!(lasso_objective(&psi, &m, l1, &a1) <= lasso_objective(&psi, &m, l1, &zero) + 1e-12);
        }
    }
}

//! Reproducing kernels and kernel ridge regression.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::MapEstimator;
use crate::geometry::{Location, Unit};
use crate::linalg::{cholesky_with_jitter, symmetrize};
use crate::measurement::MeasurementSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(−‖x−x′‖² / 2σ²)`
    Rbf { sigma: f64 },
    /// Gudmundson covariance `σ_s² 2^{−d/δ_c}` plus a nugget `σ_f²` that
    /// only enters Gram diagonals (same observation index).
    Covariance { sigma2_s: f64, delta_c: f64, nugget: f64 },
}

impl Kernel {
    pub fn rbf(sigma: f64) -> Result<Self> {
        let k = Kernel::Rbf { sigma };
        k.validate()?;
        Ok(k)
    }

    pub fn covariance(sigma2_s: f64, delta_c: f64, nugget: f64) -> Result<Self> {
        let k = Kernel::Covariance { sigma2_s, delta_c, nugget };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Rbf { sigma } if !(sigma > 0.0) || !sigma.is_finite() => invalid("RBF width must be positive"),
            Kernel::Covariance { sigma2_s, delta_c, nugget }
                if !(sigma2_s >= 0.0) || !(delta_c > 0.0) || !(nugget >= 0.0) =>
            {
                invalid("covariance kernel needs σ² ≥ 0, δ_c > 0 and nugget ≥ 0")
            }
            _ => Ok(()),
        }
    }

    /// Kernel between two distinct observations.
    pub fn eval(&self, a: &Location, b: &Location) -> f64 {
        let d = a.distance(b);
        match *self {
            Kernel::Rbf { sigma } => (-(d * d) / (2.0 * sigma * sigma)).exp(),
            Kernel::Covariance { sigma2_s, delta_c, .. } => sigma2_s * (-d / delta_c).exp2(),
        }
    }

    fn nugget(&self) -> f64 {
        match *self {
            Kernel::Covariance { nugget, .. } => nugget,
            Kernel::Rbf { .. } => 0.0,
        }
    }

    pub fn gram(&self, points: &[Location]) -> DMatrix<f64> {
        let n = points.len();
        let mut k = DMatrix::from_fn(n, n, |i, j| self.eval(&points[i], &points[j]));
        symmetrize(&mut k);
        let nugget = self.nugget();
        for i in 0..n {
            k[(i, i)] += nugget;
        }
        k
    }

    /// `[κ(x, p_1), …, κ(x, p_N)]`
    pub fn cross(&self, x: &Location, points: &[Location]) -> DVector<f64> {
        DVector::from_iterator(points.len(), points.iter().map(|p| self.eval(x, p)))
    }
}

/// `f(x) = Σ_n α_n κ(x, x_n)`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelExpansion {
    pub kernel: Kernel,
    pub centroids: Vec<Location>,
    pub coefficients: Vec<f64>,
    pub unit: Unit,
}

impl KernelExpansion {
    pub fn new(kernel: Kernel, centroids: Vec<Location>, coefficients: Vec<f64>, unit: Unit) -> Result<Self> {
        if centroids.len() != coefficients.len() {
            return Err(Error::DimensionMismatch { expected: centroids.len(), found: coefficients.len() });
        }
        Ok(Self { kernel, centroids, coefficients, unit })
    }

    fn alpha(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coefficients)
    }
}

impl MapEstimator for KernelExpansion {
    fn evaluate(&self, loc: &Location) -> f64 {
        self.centroids
            .iter()
            .zip(&self.coefficients)
            .map(|(c, a)| a * self.kernel.eval(loc, c))
            .sum()
    }

    fn unit(&self) -> Unit {
        self.unit
    }
}

/// Solves `(K + λN I) α = m`.
pub fn fit_krr(kernel: &Kernel, data: &MeasurementSet, lambda: f64) -> Result<KernelExpansion> {
    kernel.validate()?;
    if data.is_empty() {
        return invalid("kernel ridge regression needs at least one measurement");
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return invalid("regularization weight must be finite and non-negative");
    }
    let locs = data.locations();
    let n = locs.len();
    let m = DVector::from_vec(data.values());
    let mut a = kernel.gram(&locs);
    for i in 0..n {
        a[(i, i)] += lambda * n as f64;
    }
    let chol = if lambda > 0.0 {
        cholesky_with_jitter(&a)?.0
    } else {
        Cholesky::new(a.clone()).ok_or_else(|| {
            Error::Singular("kernel matrix is singular at lambda = 0; use lambda > 0".into())
        })?
    };
    let mut alpha = chol.solve(&m);
    // One step of iterative refinement.
    let r = &m - &a * &alpha;
    alpha += chol.solve(&r);
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("kernel system produced non-finite coefficients".into()));
    }
    KernelExpansion::new(*kernel, locs, alpha.iter().copied().collect(), data.unit())
}

/// `sqrt(αᵀ K α)` over the expansion's own centroids.
pub fn rkhs_norm(expansion: &KernelExpansion) -> f64 {
    let k = expansion.kernel.gram(&expansion.centroids);
    let a = expansion.alpha();
    a.dot(&(&k * &a)).max(0.0).sqrt()
}

/// `(1/N) Σ (m_n − f(x_n))² + λ ‖f‖²`. When the centroids are the data
/// locations the fitted values use the Gram matrix, so a nugget counts for
/// matching indices.
pub fn krr_objective(kernel: &Kernel, data: &MeasurementSet, lambda: f64, expansion: &KernelExpansion) -> f64 {
    let locs = data.locations();
    let n = locs.len().max(1) as f64;
    let m = DVector::from_vec(data.values());
    let fitted = if expansion.centroids == locs {
        kernel.gram(&locs) * expansion.alpha()
    } else {
        let mut e = expansion.clone();
        e.kernel = *kernel;
        DVector::from_iterator(locs.len(), locs.iter().map(|x| e.evaluate(x)))
    };
    let norm = rkhs_norm(expansion);
    (m - fitted).norm_squared() / n + lambda * norm * norm
}

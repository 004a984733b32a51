//! Power-map recovery on a 2D grid by nuclear-norm regularised matrix
//! completion.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Grid, GridMap, Unit};
use crate::measurement::MeasurementSet;

pub const MAX_ITERATIONS: usize = 100_000;
pub const TOLERANCE: f64 = 1e-10;

/// Observed entries `(i, j) ∈ O` of an `I × J` grid matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialGridObservation {
    grid: Grid,
    observed: Vec<(usize, usize)>,
    values: Vec<f64>,
    unit: Unit,
}

impl PartialGridObservation {
    pub fn new(grid: Grid, observed: Vec<(usize, usize)>, values: Vec<f64>, unit: Unit) -> Result<Self> {
        if grid.dim() != 2 {
            return invalid("matrix completion needs a 2D grid");
        }
        if observed.is_empty() {
            return invalid("at least one observed entry is required");
        }
        if observed.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: observed.len(), found: values.len() });
        }
        let (rows, cols) = (grid.counts()[0], grid.counts()[1]);
        let mut seen = std::collections::BTreeSet::new();
        for &(i, j) in &observed {
            if i >= rows || j >= cols {
                return invalid("observed index outside the grid");
            }
            if !seen.insert((i, j)) {
                return invalid("observed indices must be unique");
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("observed values must be finite");
        }
        Ok(Self { grid, observed, values, unit })
    }

    /// Bins each measurement to its nearest grid point; cells hit more than
    /// once hold the average. Entries are ordered by flat grid index.
    pub fn from_measurements(grid: &Grid, data: &MeasurementSet) -> Result<Self> {
        if data.is_empty() {
            return invalid("no measurements to bin");
        }
        if data.is_link_dataset() {
            return invalid("matrix completion takes point measurements");
        }
        let mut bins: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for m in data.measurements() {
            let e = bins.entry(grid.nearest_index(&m.location)).or_insert((0.0, 0));
            e.0 += m.value;
            e.1 += 1;
        }
        let (observed, values) = bins
            .into_iter()
            .map(|(flat, (sum, count))| {
                let idx = grid.multi_index(flat);
                ((idx[0], idx[1]), sum / count as f64)
            })
            .unzip();
        Self::new(grid.clone(), observed, values, data.unit())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn observed(&self) -> &[(usize, usize)] {
        &self.observed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    /// Observed values in place, zeros elsewhere.
    pub fn zero_filled(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.grid.counts()[0], self.grid.counts()[1]);
        for (&(i, j), v) in self.observed.iter().zip(&self.values) {
            m[(i, j)] = *v;
        }
        m
    }

    /// `½ Σ_O (P − M)² + λ ‖P‖_*`
    pub fn objective(&self, p: &DMatrix<f64>, lambda: f64) -> Result<f64> {
        let data: f64 = self
            .observed
            .iter()
            .zip(&self.values)
            .map(|(&(i, j), v)| (p[(i, j)] - v).powi(2))
            .sum();
        Ok(0.5 * data + lambda * nuclear_norm(p)?)
    }
}

fn svd_of(m: &DMatrix<f64>) -> Result<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    m.clone()
        .try_svd(true, true, 5.0 * f64::EPSILON, 0)
        .ok_or_else(|| Error::Factorization("SVD did not converge".into()))
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(svd_of(m)?.singular_values.sum())
}

/// Singular value soft-thresholding: the proximal operator of `τ‖·‖_*`.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau >= 0.0) {
        return invalid("threshold must be non-negative");
    }
    if tau == 0.0 || m.is_empty() {
        return Ok(m.clone());
    }
    let mut svd = svd_of(m)?;
    svd.singular_values.apply(|s| *s = (*s - tau).max(0.0));
    svd.recompose().map_err(|e| Error::Factorization(e.to_string()))
}

/// Number of singular values above `rel · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel: f64) -> Result<usize> {
    if m.is_empty() {
        return Ok(0);
    }
    let s = svd_of(m)?.singular_values;
    let smax = s.max();
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|v| **v > rel * smax).count())
}

/// Fraction of `‖M‖²_F` captured by the best rank-`k` approximation.
pub fn rank_k_energy(m: &DMatrix<f64>, k: usize) -> Result<f64> {
    let mut s: Vec<f64> = svd_of(m)?.singular_values.iter().map(|v| v * v).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = s.iter().sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok(s.iter().take(k).sum::<f64>() / total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionResult {
    pub map: GridMap,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each iteration, starting with the initial point.
    pub history: Vec<f64>,
}

/// Accelerated proximal gradient with unit step and restart on objective
/// increase, from a zero start. Stops once the fixed-point residual
/// `‖P − SVT(P − 𝒫_O(P − M), λ)‖_F` falls to `TOLERANCE · max(1, ‖M_O‖)`.
pub fn complete(obs: &PartialGridObservation, lambda: f64) -> Result<CompletionResult> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return invalid("regularization weight must be finite and non-negative");
    }
    let (rows, cols) = (obs.grid.counts()[0], obs.grid.counts()[1]);
    let prox_step = |p: &DMatrix<f64>| {
        let mut step = p.clone();
        for (&(i, j), v) in obs.observed.iter().zip(&obs.values) {
            step[(i, j)] = *v;
        }
        svt(&step, lambda)
    };
    let scale = obs.values.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let mut x = DMatrix::zeros(rows, cols);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut obj = obs.objective(&x, lambda)?;
    let mut history = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=MAX_ITERATIONS {
        iterations = it;
        let next = prox_step(&z)?;
        let next_obj = obs.objective(&next, lambda)?;
        if next_obj > obj {
            if z == x {
                // A plain step from x only rises through round-off.
                converged = true;
                break;
            }
            z = x.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &x) * ((t - 1.0) / t_next);
        t = t_next;
        x = next;
        obj = next_obj;
        history.push(obj);
        if (&x - prox_step(&x)?).norm() <= TOLERANCE * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("matrix completion stopped after {MAX_ITERATIONS} iterations");
    }
    Ok(CompletionResult { map: GridMap::from_matrix(obs.grid.clone(), &x, obs.unit)?, converged, iterations, history })
}

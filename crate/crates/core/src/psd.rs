//! PSD maps over space × frequency.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::MapEstimator;
use crate::formats::PsdRecord;
use crate::geometry::{db_to_linear, linear_to_db, Location, Unit};
use crate::kernels::{fit_krr, Kernel, KernelExpansion};
use crate::kriging::{fit_kriging, CovarianceModel, KrigingEstimate};
use crate::linalg::{min_eigenvalue, nnls};
use crate::measurement::MeasurementSet;
use crate::parametric::{fit_ls, BasisSet, LinearMapEstimate};
use crate::simulator::seeded_rng;

const NMF_MAX_SWEEPS: usize = 500;
const NMF_TOL: f64 = 1e-9;

/// `C` non-negative frequency curves `b_c(f)` sampled on a frequency grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BemBasis {
    frequencies: Vec<f64>,
    curves: Vec<Vec<f64>>,
    centers: Vec<f64>,
}

impl BemBasis {
    pub fn new(frequencies: Vec<f64>, curves: Vec<Vec<f64>>, centers: Vec<f64>) -> Result<Self> {
        let f = frequencies.len();
        if f == 0 || curves.is_empty() {
            return invalid("a basis needs at least one frequency and one curve");
        }
        if frequencies.windows(2).any(|w| !(w[1] > w[0])) || frequencies.iter().any(|v| !v.is_finite()) {
            return invalid("frequencies must be finite and strictly increasing");
        }
        if curves.len() > f {
            return invalid("more basis curves than frequencies");
        }
        if centers.len() != curves.len() {
            return invalid("one center frequency per curve is required");
        }
        if curves.iter().any(|c| c.len() != f || c.iter().any(|v| !(*v >= 0.0) || !v.is_finite())) {
            return invalid("curves must be non-negative and sampled on the frequency grid");
        }
        let basis = Self { frequencies, curves, centers };
        let b = basis.matrix();
        if min_eigenvalue(&b.tr_mul(&b)) <= 1e-10 {
            return invalid("basis curves are not linearly independent");
        }
        Ok(basis)
    }

    /// Raised-cosine bumps of width `bandwidth` and roll-off `rolloff ∈ [0, 1]`
    /// centred on `centers`.
    pub fn raised_cosine(frequencies: Vec<f64>, centers: Vec<f64>, bandwidth: f64, rolloff: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !(0.0..=1.0).contains(&rolloff) {
            return invalid("raised cosine needs positive bandwidth and roll-off in [0, 1]");
        }
        let flat = (1.0 - rolloff) * bandwidth / 2.0;
        let edge = (1.0 + rolloff) * bandwidth / 2.0;
        let curves = centers
            .iter()
            .map(|c| {
                frequencies
                    .iter()
                    .map(|f| {
                        let d = (f - c).abs();
                        if d <= flat {
                            1.0
                        } else if d <= edge {
                            0.5 * (1.0 + (std::f64::consts::PI * (d - flat) / (rolloff * bandwidth)).cos())
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(frequencies, curves, centers)
    }

    /// `C = F` unit indicators, one per frequency.
    pub fn indicator(frequencies: Vec<f64>) -> Result<Self> {
        let f = frequencies.len();
        let curves = (0..f).map(|c| (0..f).map(|j| if c == j { 1.0 } else { 0.0 }).collect()).collect();
        let centers = frequencies.clone();
        Self::new(frequencies, curves, centers)
    }

    /// A single constant curve.
    pub fn flat(frequencies: Vec<f64>) -> Result<Self> {
        let f = frequencies.len();
        let center = frequencies.iter().sum::<f64>() / f.max(1) as f64;
        Self::new(frequencies, vec![vec![1.0; f]], vec![center])
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn value(&self, c: usize, j: usize) -> f64 {
        self.curves[c][j]
    }

    pub fn curve(&self, c: usize) -> &[f64] {
        &self.curves[c]
    }

    /// `F × C` matrix with columns `b_c`.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.frequencies.len(), self.len(), |j, c| self.curves[c][j])
    }

    /// Width of the frequency bin around each grid frequency (1 for a single
    /// frequency).
    pub fn bin_widths(&self) -> Vec<f64> {
        let f = &self.frequencies;
        if f.len() == 1 {
            return vec![1.0];
        }
        let last = f.len() - 1;
        (0..f.len())
            .map(|j| match j {
                0 => f[1] - f[0],
                j if j == last => f[last] - f[last - 1],
                j => 0.5 * (f[j + 1] - f[j - 1]),
            })
            .collect()
    }

    /// Power carried by curve `c`: `Σ_j b_c(f_j) Δf_j`.
    pub fn curve_integral(&self, c: usize) -> f64 {
        self.curves[c].iter().zip(self.bin_widths()).map(|(b, w)| b * w).sum()
    }
}

/// Per-location PSD vectors `m_n ∈ R₊^F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdMeasurementSet {
    locations: Vec<Location>,
    psd: Vec<Vec<f64>>,
    noise_variance: f64,
}

impl PsdMeasurementSet {
    pub fn new(locations: Vec<Location>, psd: Vec<Vec<f64>>, noise_variance: f64) -> Result<Self> {
        if locations.len() != psd.len() {
            return Err(Error::DimensionMismatch { expected: locations.len(), found: psd.len() });
        }
        if !(noise_variance >= 0.0) {
            return invalid("noise variance must be non-negative");
        }
        if let Some(first) = psd.first() {
            if first.is_empty() {
                return invalid("PSD vectors need at least one frequency");
            }
            if psd.iter().any(|p| p.len() != first.len()) {
                return invalid("all PSD vectors must have the same length");
            }
        }
        if psd.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("PSD values must be finite and non-negative");
        }
        if let Some(d) = locations.first().map(Location::dim) {
            if locations.iter().any(|l| l.dim() != d) {
                return invalid("locations must share one dimensionality");
            }
        }
        Ok(Self { locations, psd, noise_variance })
    }

    pub fn from_records(records: Vec<PsdRecord>, noise_variance: f64) -> Result<Self> {
        let (locations, psd) = records.into_iter().map(|r| (r.location, r.psd)).unzip();
        Self::new(locations, psd, noise_variance)
    }

    pub fn to_records(&self) -> Vec<PsdRecord> {
        self.locations
            .iter()
            .zip(&self.psd)
            .map(|(l, p)| PsdRecord { location: *l, psd: p.clone() })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn frequency_count(&self) -> usize {
        self.psd.first().map_or(0, Vec::len)
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn psd(&self) -> &[Vec<f64>] {
        &self.psd
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// `N × F` data matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.frequency_count(), |n, j| self.psd[n][j])
    }

    /// Power map data at one frequency.
    pub fn frequency_slice(&self, j: usize) -> Result<MeasurementSet> {
        if j >= self.frequency_count() {
            return invalid("frequency index out of range");
        }
        self.with_targets(&self.psd.iter().map(|p| p[j]).collect::<Vec<_>>())
    }

    /// Watt-valued point data at the measurement locations.
    pub fn with_targets(&self, values: &[f64]) -> Result<MeasurementSet> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: values.len() });
        }
        let points: Vec<(Location, f64)> = self.locations.iter().copied().zip(values.iter().copied()).collect();
        MeasurementSet::from_points(&points, self.noise_variance, Unit::Watts)
    }
}

/// Spatial interpolator applied to linear-power targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InnerEstimator {
    Krr { kernel: Kernel, lambda: f64 },
    /// Kriging in dB; targets are converted at the boundary.
    Kriging { model: CovarianceModel },
    Ls { basis: BasisSet },
}

#[derive(Clone, Debug)]
pub enum FittedMap {
    Kernel(KernelExpansion),
    Linear(LinearMapEstimate),
    /// Kriging estimate in dB, reported in watts.
    KrigingWatts(KrigingEstimate),
}

impl MapEstimator for FittedMap {
    fn evaluate(&self, loc: &Location) -> f64 {
        match self {
            FittedMap::Kernel(e) => e.evaluate(loc),
            FittedMap::Linear(e) => e.evaluate(loc),
            FittedMap::KrigingWatts(e) => db_to_linear(e.evaluate(loc)),
        }
    }

    fn unit(&self) -> Unit {
        Unit::Watts
    }
}

impl InnerEstimator {
    /// Fits watt-valued point data.
    pub fn fit(&self, data: &MeasurementSet) -> Result<FittedMap> {
        data.unit().ensure(Unit::Watts)?;
        match self {
            InnerEstimator::Krr { kernel, lambda } => Ok(FittedMap::Kernel(fit_krr(kernel, data, *lambda)?)),
            InnerEstimator::Ls { basis } => Ok(FittedMap::Linear(fit_ls(basis, data)?)),
            InnerEstimator::Kriging { model } => {
                let db = data.values().into_iter().map(linear_to_db).collect::<Result<Vec<_>>>()?;
                Ok(FittedMap::KrigingWatts(fit_kriging(model, &data.with_values(&db, Unit::Db)?)?))
            }
        }
    }
}

/// One independent map per frequency.
#[derive(Clone, Debug)]
pub struct PerFrequencyEstimate {
    pub maps: Vec<FittedMap>,
}

impl PerFrequencyEstimate {
    pub fn evaluate(&self, x: &Location, j: usize) -> f64 {
        self.maps[j].evaluate(x)
    }

    pub fn psd_at(&self, x: &Location) -> Vec<f64> {
        self.maps.iter().map(|m| m.evaluate(x)).collect()
    }
}

pub fn fit_per_frequency(data: &PsdMeasurementSet, inner: &InnerEstimator) -> Result<PerFrequencyEstimate> {
    let f = data.frequency_count();
    if f == 0 {
        return invalid("PSD data has no frequencies");
    }
    let maps = (0..f)
        .into_par_iter()
        .map(|j| inner.fit(&data.frequency_slice(j)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(PerFrequencyEstimate { maps })
}

/// Result of a nonnegative factorisation `M ≈ H P`.
#[derive(Clone, Debug, PartialEq)]
pub struct Nmf {
    /// `N × S`
    pub h: DMatrix<f64>,
    /// `S × F`, rows summing to one (unless identically zero).
    pub p: DMatrix<f64>,
    /// `‖M − HP‖²_F` after each sweep.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Alternating nonnegative least squares. Sources are ordered by total
/// power (column sums of H after normalisation) in descending order.
pub fn nmf(m: &DMatrix<f64>, s: usize, seed: u64) -> Result<Nmf> {
    let (n, f) = m.shape();
    if s == 0 || s > f || s > n {
        return invalid("need 1 ≤ S ≤ min(N, F)");
    }
    if m.iter().any(|v| !(*v >= 0.0)) {
        return invalid("NMF requires non-negative data");
    }
    let mut rng = seeded_rng(seed, 5);
    let mut p = DMatrix::from_fn(s, f, |_, _| rng.random::<f64>() + 0.01);
    let mut h = DMatrix::zeros(n, s);
    let total = m.norm_squared();
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..NMF_MAX_SWEEPS {
        let pt = p.transpose();
        for r in 0..n {
            let row = nnls(&pt, &m.row(r).transpose());
            h.set_row(r, &row.transpose());
        }
        for j in 0..f {
            let col = nnls(&h, &m.column(j).into_owned());
            p.set_column(j, &col);
        }
        let obj = (m - &h * &p).norm_squared();
        let prev = history.last().copied();
        history.push(obj);
        if obj <= NMF_TOL * NMF_TOL * total {
            converged = true;
            break;
        }
        if let Some(prev) = prev {
            if prev - obj <= NMF_TOL * prev.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    for k in 0..s {
        let sum: f64 = p.row(k).sum();
        if sum > 0.0 {
            p.row_mut(k).scale_mut(1.0 / sum);
            h.column_mut(k).scale_mut(sum);
        }
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| h.column(b).sum().total_cmp(&h.column(a).sum()).then(a.cmp(&b)));
    let h = h.select_columns(&order);
    let p = p.select_rows(&order);
    Ok(Nmf { h, p, history, converged })
}

#[derive(Clone, Debug)]
pub struct NarrowbandEstimate {
    pub gains: Vec<KernelExpansion>,
    /// `S × F` transmit PSDs, unit-sum rows.
    pub psds: DMatrix<f64>,
    pub factorization: Nmf,
}

impl NarrowbandEstimate {
    /// `Σ_s ĥ_s(x) p̂_s(f_j)`
    pub fn evaluate(&self, x: &Location, j: usize) -> f64 {
        self.gains.iter().enumerate().map(|(s, g)| g.evaluate(x) * self.psds[(s, j)]).sum()
    }

    pub fn psd_at(&self, x: &Location) -> Vec<f64> {
        (0..self.psds.ncols()).map(|j| self.evaluate(x, j)).collect()
    }
}

/// Two-stage narrowband estimation: NMF of the `N × F` data, then KRR on
/// each column of `H`.
pub fn fit_narrowband(data: &PsdMeasurementSet, s: usize, seed: u64, kernel: &Kernel, lambda: f64) -> Result<NarrowbandEstimate> {
    let factorization = nmf(&data.matrix(), s, seed)?;
    if !factorization.converged {
        log::warn!("NMF did not converge within {NMF_MAX_SWEEPS} sweeps");
    }
    let gains = (0..s)
        .map(|k| {
            let col: Vec<f64> = factorization.h.column(k).iter().copied().collect();
            fit_krr(kernel, &data.with_targets(&col)?, lambda)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NarrowbandEstimate { gains, psds: factorization.p.clone(), factorization })
}

#[derive(Clone, Debug)]
pub struct BemEstimate {
    pub basis: BemBasis,
    /// `N × C` projected coefficients.
    pub coefficients: DMatrix<f64>,
    pub maps: Vec<FittedMap>,
}

impl BemEstimate {
    /// `Σ_c p̂_c(x) b_c(f_j)`
    pub fn evaluate(&self, x: &Location, j: usize) -> f64 {
        self.maps.iter().enumerate().map(|(c, m)| m.evaluate(x) * self.basis.value(c, j)).sum()
    }

    pub fn psd_at(&self, x: &Location) -> Vec<f64> {
        let p: Vec<f64> = self.maps.iter().map(|m| m.evaluate(x)).collect();
        (0..self.basis.frequencies().len())
            .map(|j| p.iter().enumerate().map(|(c, v)| v * self.basis.value(c, j)).sum())
            .collect()
    }
}

/// Projects every PSD vector onto the basis (NNLS), then fits each
/// coefficient map with `inner`.
pub fn fit_wideband_bem(data: &PsdMeasurementSet, basis: &BemBasis, inner: &InnerEstimator) -> Result<BemEstimate> {
    if data.frequency_count() != basis.frequencies().len() {
        return Err(Error::DimensionMismatch { expected: basis.frequencies().len(), found: data.frequency_count() });
    }
    let b = basis.matrix();
    let c = basis.len();
    let rows: Vec<DVector<f64>> = data.psd().par_iter().map(|m| nnls(&b, &DVector::from_column_slice(m))).collect();
    let coefficients = DMatrix::from_fn(data.len(), c, |n, k| rows[n][k]);
    let maps = (0..c)
        .into_par_iter()
        .map(|k| {
            let targets: Vec<f64> = coefficients.column(k).iter().copied().collect();
            inner.fit(&data.with_targets(&targets)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BemEstimate { basis: basis.clone(), coefficients, maps })
}

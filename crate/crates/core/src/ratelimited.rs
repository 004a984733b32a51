//! PSD cartography from quantized filter-bank energies.
//!
//! Sensor `n` passes its received signal through `J` filters `g_{n,j}` and
//! reports only which quantization interval each output power falls into.
//! With `p(x, f) = Σ_c f_c(x) b_c(f)` the branch power is linear in the
//! component maps: `φ_{n,j} = Σ_c f_c(x_n) b_{n,j,c}` with
//! `b_{n,j,c} = ∫ b_c(f) |g_{n,j}(f)|² df`.
//!
//! The fit minimizes `w Σ_i dist(ŷ_i, [lo_i, hi_i)) + λ Σ_c ‖f_c‖²`. Writing
//! every `f_c` in representer form `f_c = Σ_i ν_i b_{i,c} κ(·, x_i)` and
//! dualizing the interval penalty yields the box-constrained problem
//!
//! ```text
//! min_ν  νᵀGν − 2 Σ_i s_i(ν_i)      |ν_i| ≤ w / (2λ)
//! G_{ii'} = (b_iᵀ b_i') κ(x_i, x_i'),   s_i(ν) = ν·lo_i (ν > 0), ν·hi_i (ν < 0)
//! ```
//!
//! with fitted outputs `ŷ = Gν`, solved by accelerated projected gradient.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::formats::QuantizedRow;
use crate::geometry::{Grid, GridMap, Location, Unit};
use crate::kernels::Kernel;
use crate::linalg::{cholesky_with_jitter, max_eigenvalue, trapz};
use crate::psd::BemBasis;
use crate::simulator::{seeded_rng, Realization};

pub const MAX_ITERATIONS: usize = 100_000;
const STATIONARITY_TOL: f64 = 1e-10;
const STREAM_FILTERS: u64 = 11;

/// `|g_{n,j}(f)|²` for every sensor `n` and branch `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    frequencies: Vec<f64>,
    responses: Vec<Vec<Vec<f64>>>,
}

impl FilterBank {
    pub fn new(frequencies: Vec<f64>, responses: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if responses.is_empty() || responses.iter().any(|r| r.is_empty()) {
            return invalid("every sensor needs at least one branch");
        }
        let branches = responses[0].len();
        for sensor in &responses {
            if sensor.len() != branches {
                return Err(Error::DimensionMismatch { expected: branches, found: sensor.len() });
            }
            for r in sensor {
                if r.len() != frequencies.len() {
                    return Err(Error::DimensionMismatch { expected: frequencies.len(), found: r.len() });
                }
                if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return invalid("filter responses must be finite and non-negative");
                }
            }
        }
        Ok(Self { frequencies, responses })
    }

    /// Squared standard-normal samples per frequency, one stream per seed.
    /// Fails when some sensor's projection vectors are linearly dependent.
    pub fn pseudorandom(basis: &BemBasis, sensors: usize, branches: usize, seed: u64) -> Result<Self> {
        if sensors == 0 || branches == 0 {
            return invalid("filter bank needs sensors and branches");
        }
        let f = basis.frequencies().len();
        let mut rng = seeded_rng(seed, STREAM_FILTERS);
        let responses = (0..sensors)
            .map(|_| {
                (0..branches)
                    .map(|_| {
                        (0..f)
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                z * z
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let bank = Self::new(basis.frequencies().to_vec(), responses)?;
        bank.projections(basis)?;
        Ok(bank)
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn sensors(&self) -> usize {
        self.responses.len()
    }

    pub fn branches(&self) -> usize {
        self.responses[0].len()
    }

    pub fn response(&self, sensor: usize, branch: usize) -> &[f64] {
        &self.responses[sensor][branch]
    }

    /// Per sensor, the `J × C` matrix of `∫ b_c |g_{n,j}|² df`. Each must
    /// have full row rank.
    pub fn projections(&self, basis: &BemBasis) -> Result<Vec<DMatrix<f64>>> {
        if basis.frequencies() != self.frequencies.as_slice() {
            return invalid("filter bank and basis use different frequency grids");
        }
        let c = basis.len();
        let j = self.branches();
        if j > c {
            return invalid(format!("{j} branches cannot be independent over {c} basis functions"));
        }
        self.responses
            .iter()
            .enumerate()
            .map(|(n, sensor)| {
                let m = DMatrix::from_fn(j, c, |row, col| {
                    let prod: Vec<f64> = basis.curve(col).iter().zip(&sensor[row]).map(|(b, g)| b * g).collect();
                    trapz(&prod, &self.frequencies)
                });
                let sv = m.singular_values();
                let smax = sv.max();
                if !(sv.min() > 1e-10 * smax) {
                    return invalid(format!("projection vectors of sensor {n} are linearly dependent"));
                }
                Ok(m)
            })
            .collect()
    }
}

/// `∫ p(f) |g(f)|² df` by the trapezoidal rule.
pub fn branch_power(psd: &[f64], response: &[f64], frequencies: &[f64]) -> Result<f64> {
    if psd.len() != frequencies.len() {
        return Err(Error::DimensionMismatch { expected: frequencies.len(), found: psd.len() });
    }
    if response.len() != frequencies.len() {
        return Err(Error::DimensionMismatch { expected: frequencies.len(), found: response.len() });
    }
    let prod: Vec<f64> = psd.iter().zip(response).map(|(p, g)| p * g).collect();
    Ok(trapz(&prod, frequencies))
}

/// Scalar quantizer over half-open intervals. Code `k` covers
/// `[t_{k-1}, t_k)` with `t_{-1} = −∞` and `t_K = +∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    breakpoints: Vec<f64>,
}

impl Quantizer {
    pub fn new(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() {
            return invalid("a quantizer needs at least one breakpoint");
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("breakpoints must be finite and strictly increasing");
        }
        Ok(Self { breakpoints })
    }

    /// Breakpoints `start, start + step, …` (`count` of them).
    pub fn uniform(start: f64, step: f64, count: usize) -> Result<Self> {
        if !(step > 0.0) {
            return invalid("quantization step must be positive");
        }
        Self::new((0..count).map(|k| start + step * k as f64).collect())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn codes(&self) -> usize {
        self.breakpoints.len() + 1
    }

    pub fn quantize(&self, value: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= value)
    }

    pub fn interval(&self, code: usize) -> Result<(f64, f64)> {
        if code >= self.codes() {
            return invalid(format!("code {code} is outside the codebook"));
        }
        let lo = if code == 0 { f64::NEG_INFINITY } else { self.breakpoints[code - 1] };
        let hi = self.breakpoints.get(code).copied().unwrap_or(f64::INFINITY);
        Ok((lo, hi))
    }

    pub fn measure(&self, sensor: usize, location: Location, branch: usize, value: f64) -> Result<QuantizedMeasurement> {
        if !value.is_finite() {
            return invalid("cannot quantize a non-finite value");
        }
        let code = self.quantize(value);
        let (lower, upper) = self.interval(code)?;
        Ok(QuantizedMeasurement { sensor, location, branch, code, lower, upper })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedMeasurement {
    pub sensor: usize,
    pub location: Location,
    pub branch: usize,
    pub code: usize,
    pub lower: f64,
    pub upper: f64,
}

impl QuantizedMeasurement {
    pub fn to_row(&self) -> QuantizedRow {
        QuantizedRow { location: self.location, branch: self.branch, code: self.code }
    }
}

/// Rebuilds measurements from CSV rows; sensors are numbered by first
/// appearance of their location.
pub fn from_rows(rows: &[QuantizedRow], quantizer: &Quantizer) -> Result<Vec<QuantizedMeasurement>> {
    let mut sensors: Vec<Location> = Vec::new();
    rows.iter()
        .map(|r| {
            let sensor = match sensors.iter().position(|s| *s == r.location) {
                Some(s) => s,
                None => {
                    sensors.push(r.location);
                    sensors.len() - 1
                }
            };
            let (lower, upper) = quantizer.interval(r.code)?;
            Ok(QuantizedMeasurement { sensor, location: r.location, branch: r.branch, code: r.code, lower, upper })
        })
        .collect()
}

/// Noiseless branch powers `φ_{n,j}` at every sensor, parallel per sensor.
pub fn simulate_branch_powers(
    real: &Realization,
    sensors: &[Location],
    basis: &BemBasis,
    bank: &FilterBank,
) -> Result<Vec<Vec<f64>>> {
    if sensors.len() > bank.sensors() {
        return Err(Error::DimensionMismatch { expected: bank.sensors(), found: sensors.len() });
    }
    sensors
        .par_iter()
        .enumerate()
        .map(|(n, x)| {
            let psd = real.psd_at(x, basis)?;
            (0..bank.branches())
                .map(|j| branch_power(&psd, bank.response(n, j), bank.frequencies()))
                .collect()
        })
        .collect()
}

pub fn quantize_powers(powers: &[Vec<f64>], sensors: &[Location], quantizer: &Quantizer) -> Result<Vec<QuantizedMeasurement>> {
    let mut out = Vec::new();
    for (n, (row, x)) in powers.iter().zip(sensors).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out.push(quantizer.measure(n, *x, j, v)?);
        }
    }
    Ok(out)
}

/// One unquantized branch power.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerMeasurement {
    pub sensor: usize,
    pub location: Location,
    pub branch: usize,
    pub power: f64,
}

pub fn power_measurements(powers: &[Vec<f64>], sensors: &[Location]) -> Vec<PowerMeasurement> {
    let mut out = Vec::new();
    for (n, (row, x)) in powers.iter().zip(sensors).enumerate() {
        for (j, &power) in row.iter().enumerate() {
            out.push(PowerMeasurement { sensor: n, location: *x, branch: j, power });
        }
    }
    out
}

/// Component maps `f_c(x) = Σ_s β_{c,s} κ(x, x_s)` over the distinct sensors.
#[derive(Clone, Debug)]
pub struct RateLimitedEstimate {
    pub kernel: Kernel,
    pub basis: BemBasis,
    pub centroids: Vec<Location>,
    /// `C × S`
    pub beta: DMatrix<f64>,
    /// Fitted branch powers `ŷ`, in measurement order.
    pub predicted: Vec<f64>,
    pub objective: f64,
    /// Best primal objective seen after each iteration.
    pub history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl RateLimitedEstimate {
    pub fn component(&self, c: usize, x: &Location) -> f64 {
        let k = self.kernel.cross(x, &self.centroids);
        self.beta.row(c).transpose().dot(&k)
    }

    pub fn components(&self, x: &Location) -> Vec<f64> {
        let k = self.kernel.cross(x, &self.centroids);
        (&self.beta * k).iter().copied().collect()
    }

    /// `p(x, f_j) = Σ_c f_c(x) b_c(f_j)`
    pub fn psd_at(&self, x: &Location) -> Vec<f64> {
        let comps = self.components(x);
        (0..self.basis.frequencies().len())
            .map(|j| comps.iter().enumerate().map(|(c, v)| v * self.basis.value(c, j)).sum())
            .collect()
    }

    pub fn component_map(&self, c: usize, grid: &Grid) -> GridMap {
        let values = grid.points().iter().map(|p| self.component(c, p)).collect();
        GridMap::new(grid.clone(), values, Unit::Watts).expect("one value per grid point")
    }
}

struct Design {
    centroids: Vec<Location>,
    /// Sensor slot in `centroids` per measurement.
    slot: Vec<usize>,
    /// `b_i` as rows, `I × C`.
    b: DMatrix<f64>,
    g: DMatrix<f64>,
}

fn design<'a>(
    items: impl Iterator<Item = (usize, &'a Location, usize)>,
    basis: &BemBasis,
    bank: &FilterBank,
    kernel: &Kernel,
) -> Result<Design> {
    kernel.validate()?;
    let proj = bank.projections(basis)?;
    let mut slots: BTreeMap<usize, usize> = BTreeMap::new();
    let mut centroids: Vec<Location> = Vec::new();
    let mut slot = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (sensor, loc, branch) in items {
        if sensor >= bank.sensors() || branch >= bank.branches() {
            return invalid(format!("sensor {sensor} branch {branch} is not in the filter bank"));
        }
        if !seen.insert((sensor, branch)) {
            return invalid(format!("sensor {sensor} reports branch {branch} twice"));
        }
        let s = *slots.entry(sensor).or_insert_with(|| {
            centroids.push(*loc);
            centroids.len() - 1
        });
        if centroids[s] != *loc {
            return invalid(format!("sensor {sensor} appears at two locations"));
        }
        slot.push(s);
        rows.push(proj[sensor].row(branch).iter().copied().collect());
    }
    if rows.is_empty() {
        return invalid("no measurements");
    }
    for (i, a) in centroids.iter().enumerate() {
        if centroids[..i].contains(a) {
            return invalid("two sensors share a location");
        }
    }
    let c = basis.len();
    let b = DMatrix::from_fn(rows.len(), c, |i, k| rows[i][k]);
    let k = kernel.gram(&centroids);
    let bb = &b * b.transpose();
    let n = rows.len();
    let g = DMatrix::from_fn(n, n, |i, j| bb[(i, j)] * k[(slot[i], slot[j])]);
    Ok(Design { centroids, slot, b, g })
}

fn beta_from_nu(d: &Design, nu: &DVector<f64>) -> DMatrix<f64> {
    let mut beta = DMatrix::zeros(d.b.ncols(), d.centroids.len());
    for (i, &s) in d.slot.iter().enumerate() {
        for c in 0..d.b.ncols() {
            beta[(c, s)] += nu[i] * d.b[(i, c)];
        }
    }
    beta
}

fn interval_distance(y: f64, lo: f64, hi: f64) -> f64 {
    (y - hi).max(lo - y).max(0.0)
}

fn primal_objective(g: &DMatrix<f64>, nu: &DVector<f64>, lo: &[f64], hi: &[f64], lambda: f64, weight: f64) -> (f64, DVector<f64>) {
    let y = g * nu;
    let penalty: f64 = y.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| interval_distance(*v, *l, *h)).sum();
    (weight * penalty + lambda * nu.dot(&y), y)
}

fn dual_objective(g: &DMatrix<f64>, nu: &DVector<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    let lin: f64 = nu
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&l, &h))| if v > 0.0 { v * l } else if v < 0.0 { v * h } else { 0.0 })
        .sum();
    nu.dot(&(g * nu)) - 2.0 * lin
}

fn prox(v: f64, t: f64, lo: f64, hi: f64, bound: f64) -> f64 {
    let raw = if v + 2.0 * t * lo > 0.0 {
        v + 2.0 * t * lo
    } else if v + 2.0 * t * hi < 0.0 {
        v + 2.0 * t * hi
    } else {
        0.0
    };
    let min = if lo == f64::NEG_INFINITY { 0.0 } else { -bound };
    let max = if hi == f64::INFINITY { 0.0 } else { bound };
    raw.clamp(min, max)
}

/// Fits the `C` component maps to quantization intervals.
pub fn fit_from_intervals(
    data: &[QuantizedMeasurement],
    basis: &BemBasis,
    bank: &FilterBank,
    kernel: &Kernel,
    lambda: f64,
    penalty_weight: f64,
) -> Result<RateLimitedEstimate> {
    if !(lambda >= 0.0) || !(penalty_weight > 0.0) {
        return invalid("need λ ≥ 0 and a positive penalty weight");
    }
    for m in data {
        if !(m.lower < m.upper) {
            return invalid("empty quantization interval");
        }
    }
    let d = design(data.iter().map(|m| (m.sensor, &m.location, m.branch)), basis, bank, kernel)?;
    let lo: Vec<f64> = data.iter().map(|m| m.lower).collect();
    let hi: Vec<f64> = data.iter().map(|m| m.upper).collect();
    let bound = if lambda > 0.0 { penalty_weight / (2.0 * lambda) } else { f64::INFINITY };
    let n = data.len();
    let scale = lo
        .iter()
        .chain(&hi)
        .filter(|v| v.is_finite())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let lip = 2.0 * max_eigenvalue(&d.g).max(f64::MIN_POSITIVE);
    let t = 1.0 / lip;

    let step = |y: &DVector<f64>| -> DVector<f64> {
        let grad = &d.g * y * 2.0;
        DVector::from_fn(n, |i, _| prox(y[i] - t * grad[i], t, lo[i], hi[i], bound))
    };

    let mut nu = DVector::zeros(n);
    let mut mom = nu.clone();
    let mut tk = 1.0f64;
    let mut h = dual_objective(&d.g, &nu, &lo, &hi);
    let mut best = primal_objective(&d.g, &nu, &lo, &hi, lambda, penalty_weight).0;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=MAX_ITERATIONS {
        iterations = it;
        let next = step(&mom);
        let gap = (&next - &mom).amax() * lip;
        let h_next = dual_objective(&d.g, &next, &lo, &hi);
        if h_next > h {
            // Momentum overshot: restart from the last iterate.
            mom = nu.clone();
            tk = 1.0;
            let plain = step(&nu);
            h = dual_objective(&d.g, &plain, &lo, &hi);
            nu = plain;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
            mom = &next + (&next - &nu) * ((tk - 1.0) / t_next);
            tk = t_next;
            nu = next;
            h = h_next;
        }
        best = best.min(primal_objective(&d.g, &nu, &lo, &hi, lambda, penalty_weight).0);
        history.push(best);
        if gap <= STATIONARITY_TOL * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("interval fit stopped after {iterations} iterations without reaching stationarity");
    }
    let (objective, y) = primal_objective(&d.g, &nu, &lo, &hi, lambda, penalty_weight);
    Ok(RateLimitedEstimate {
        kernel: *kernel,
        basis: basis.clone(),
        beta: beta_from_nu(&d, &nu),
        centroids: d.centroids,
        predicted: y.iter().copied().collect(),
        objective,
        history,
        converged,
        iterations,
    })
}

/// Kernel ridge regression on exact branch powers:
/// `min (1/I) Σ_i (ŷ_i − φ_i)² + λ Σ_c ‖f_c‖²`.
pub fn fit_from_powers(
    data: &[PowerMeasurement],
    basis: &BemBasis,
    bank: &FilterBank,
    kernel: &Kernel,
    lambda: f64,
) -> Result<RateLimitedEstimate> {
    if !(lambda >= 0.0) {
        return invalid("λ must be non-negative");
    }
    let d = design(data.iter().map(|m| (m.sensor, &m.location, m.branch)), basis, bank, kernel)?;
    let n = data.len();
    let phi = DVector::from_iterator(n, data.iter().map(|m| m.power));
    let a = &d.g + DMatrix::identity(n, n) * (lambda * n as f64);
    let (chol, _) = cholesky_with_jitter(&a)?;
    let nu = chol.solve(&phi);
    let y = &d.g * &nu;
    let sq: f64 = y.iter().zip(phi.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let objective = sq / n as f64 + lambda * nu.dot(&y);
    Ok(RateLimitedEstimate {
        kernel: *kernel,
        basis: basis.clone(),
        beta: beta_from_nu(&d, &nu),
        centroids: d.centroids,
        predicted: y.iter().copied().collect(),
        objective,
        history: vec![objective],
        converged: true,
        iterations: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn freqs(n: usize) -> Vec<f64> {
        (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
    }

    fn basis() -> BemBasis {
        BemBasis::raised_cosine(freqs(41), vec![0.2, 0.5, 0.8], 0.25, 0.5).unwrap()
    }

    fn sensors(n: usize) -> Vec<Location> {
        (0..n).map(|k| Location::xy(k as f64 * 1.7 % 5.0, (k as f64 * 0.9) % 4.0 + 0.3 * k as f64)).collect()
    }

    /// Branch powers from smooth component maps `f_c(x) = 1 + c + sin(x·u_c)`.
    fn truth_powers(basis: &BemBasis, bank: &FilterBank, locs: &[Location]) -> Vec<Vec<f64>> {
        locs.iter()
            .enumerate()
            .map(|(n, x)| {
                let comps: Vec<f64> = (0..basis.len()).map(|c| truth_component(c, x)).collect();
                let psd: Vec<f64> = (0..basis.frequencies().len())
                    .map(|j| comps.iter().enumerate().map(|(c, v)| v * basis.value(c, j)).sum())
                    .collect();
                (0..bank.branches()).map(|j| branch_power(&psd, bank.response(n, j), bank.frequencies()).unwrap()).collect()
            })
            .collect()
    }

    fn truth_component(c: usize, x: &Location) -> f64 {
        1.0 + c as f64 + (0.3 * x.get(0) + 0.2 * (c as f64 + 1.0) * x.get(1)).sin()
    }

    #[test]
    fn branch_power_trivial_cases() {
        let f = freqs(11);
        let psd: Vec<f64> = f.iter().map(|v| 1.0 + v).collect();
        assert!((branch_power(&psd, &[1.0; 11], &f).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(branch_power(&psd, &[0.0; 11], &f).unwrap(), 0.0);
        assert!(branch_power(&psd, &[1.0; 10], &f).is_err());
    }

    #[test]
    fn branch_power_band_energy() {
        // Rectangular (roll-off 0) curve of bandwidth 0.2 has energy 0.2.
        let f: Vec<f64> = (0..=20_000).map(|k| k as f64 / 20_000.0).collect();
        let b = BemBasis::raised_cosine(f.clone(), vec![0.5], 0.2, 0.5).unwrap();
        let select: Vec<f64> = f.iter().map(|v| if (v - 0.5).abs() <= 0.25 { 1.0 } else { 0.0 }).collect();
        let e = branch_power(b.curve(0), &select, &f).unwrap();
        assert!((e - 0.2).abs() < 1e-6, "{e}");
    }

    #[test]
    fn quantizer_conventions() {
        let q = Quantizer::new(vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(q.interval(q.quantize(1.4)).unwrap(), (1.0, 2.0));
        assert_eq!(q.interval(q.quantize(1.0)).unwrap(), (1.0, 2.0));
        assert_eq!(q.interval(q.quantize(-5.0)).unwrap().0, f64::NEG_INFINITY);
        assert_eq!(q.interval(q.quantize(7.0)).unwrap(), (2.0, f64::INFINITY));
        assert!(q.interval(4).is_err());
        assert!(Quantizer::new(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn pseudorandom_bank_is_seeded_and_independent() {
        let b = basis();
        let a = FilterBank::pseudorandom(&b, 4, 3, 5).unwrap();
        assert_eq!(a, FilterBank::pseudorandom(&b, 4, 3, 5).unwrap());
        assert_ne!(a, FilterBank::pseudorandom(&b, 4, 3, 6).unwrap());
        assert!(FilterBank::pseudorandom(&b, 4, 4, 5).is_err());
    }

    #[test]
    fn zero_intervals_give_zero_map() {
        let b = basis();
        let locs = sensors(5);
        let bank = FilterBank::pseudorandom(&b, 5, 2, 1).unwrap();
        let q = Quantizer::new(vec![0.0, 1e-3]).unwrap();
        let zeros = vec![vec![0.0; 2]; 5];
        let data = quantize_powers(&zeros, &locs, &q).unwrap();
        let est = fit_from_intervals(&data, &b, &bank, &Kernel::rbf(2.0).unwrap(), 1e-3, 1.0).unwrap();
        assert!(est.converged);
        assert_eq!(est.objective, 0.0);
        assert!(est.beta.amax() == 0.0);
    }

    #[test]
    fn wide_intervals_are_met() {
        let b = basis();
        let locs = sensors(8);
        let bank = FilterBank::pseudorandom(&b, 8, 3, 2).unwrap();
        let powers = truth_powers(&b, &bank, &locs);
        let q = Quantizer::uniform(0.0, 0.5, 20).unwrap();
        let data = quantize_powers(&powers, &locs, &q).unwrap();
        let est = fit_from_intervals(&data, &b, &bank, &Kernel::rbf(2.0).unwrap(), 1e-8, 1.0).unwrap();
        assert!(est.converged);
        for (m, y) in data.iter().zip(&est.predicted) {
            assert!(interval_distance(*y, m.lower, m.upper) <= 1e-8, "{y} not in [{}, {})", m.lower, m.upper);
        }
        assert!(est.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fine_quantization_matches_oracle() {
        let b = basis();
        let locs = sensors(8);
        let bank = FilterBank::pseudorandom(&b, 8, 2, 3).unwrap();
        let powers = truth_powers(&b, &bank, &locs);
        let kernel = Kernel::rbf(1.0).unwrap();
        let lambda = 1e-9;
        let oracle = fit_from_powers(&power_measurements(&powers, &locs), &b, &bank, &kernel, lambda).unwrap();
        let q = Quantizer::uniform(-1.0, 1e-4, 60_000).unwrap();
        let data = quantize_powers(&powers, &locs, &q).unwrap();
        let est = fit_from_intervals(&data, &b, &bank, &kernel, lambda, 1.0).unwrap();
        let grid = Grid::new(crate::geometry::Region::rect(0.0, 0.0, 5.0, 5.0).unwrap(), vec![11, 11]).unwrap();
        let dev = grid
            .points()
            .iter()
            .flat_map(|p| est.components(p).into_iter().zip(oracle.components(p)).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        assert!(est.converged);
        assert!(dev <= 1e-2, "deviation {dev}");
    }

    #[test]
    fn rows_roundtrip() {
        let q = Quantizer::new(vec![0.0, 1.0]).unwrap();
        let locs = sensors(2);
        let data = quantize_powers(&[vec![0.5, 2.0], vec![-1.0, 0.0]], &locs, &q).unwrap();
        let rows: Vec<_> = data.iter().map(|m| m.to_row()).collect();
        assert_eq!(from_rows(&rows, &q).unwrap(), data);
    }

    proptest! {
        #[test]
        fn quantize_contains_value(v in -100.0f64..100.0, step in 0.01f64..10.0) {
            let q = Quantizer::uniform(-50.0, step, 40).unwrap();
            let (lo, hi) = q.interval(q.quantize(v)).unwrap();
            prop_assert!(lo <= v && v < hi);
        }
    }
}

//! Synthetic radio environments: path loss, Gudmundson shadowing, fast
//! fading, multi-transmitter power and PSD fields, spatial loss fields, and
//! noisy measurement draws. Every random draw is a pure function of a seed.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::MapEstimator;
use crate::geometry::{db_to_linear, Grid, GridMap, Location, Unit};
use crate::linalg::cholesky_with_jitter;
use crate::measurement::{Measurement, MeasurementSet};
use crate::propmap::tomography::{line_integral, Slf, WeightModel};
use crate::psd::BemBasis;

/// Largest grid the dense shadowing sampler will factor.
pub const MAX_SHADOWING_POINTS: usize = 10_000;

const STREAM_SHADOWING: u64 = 1;
const STREAM_FADING: u64 = 2;

/// Seeded generator for one purpose (`stream`) of a run.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transmitter {
    pub location: Location,
    pub power_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psd_coefficients: Option<Vec<f64>>,
}

impl Transmitter {
    pub fn new(location: Location, power_db: f64) -> Self {
        Self {
            location,
            power_db,
            psd_coefficients: None,
        }
    }

    /// Transmitter whose PSD is `Σ_c c_c b_c(f)`; its total power is the
    /// integral of that PSD over the basis' frequency grid.
    pub fn with_psd(location: Location, coefficients: Vec<f64>, basis: &BemBasis) -> Result<Self> {
        if coefficients.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                found: coefficients.len(),
            });
        }
        if coefficients.iter().any(|c| *c < 0.0) {
            return invalid("PSD coefficients must be non-negative");
        }
        let total: f64 = coefficients
            .iter()
            .enumerate()
            .map(|(c, v)| v * basis.curve_integral(c))
            .sum();
        Ok(Self {
            location,
            power_db: 10.0 * total.log10(),
            psd_coefficients: Some(coefficients),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowingParams {
    /// σ_s² in dB².
    pub sigma2_s: f64,
    /// Decorrelation distance δ_c in meters (covariance halves at this lag).
    pub delta_c: f64,
    /// μ_s in dB.
    #[serde(default)]
    pub mean_s: f64,
}

impl ShadowingParams {
    pub fn new(sigma2_s: f64, delta_c: f64, mean_s: f64) -> Result<Self> {
        let p = Self {
            sigma2_s,
            delta_c,
            mean_s,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn none() -> Self {
        Self {
            sigma2_s: 0.0,
            delta_c: 1.0,
            mean_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_s >= 0.0) || !(self.delta_c > 0.0) || !self.mean_s.is_finite() {
            return invalid("shadowing requires sigma2_s >= 0 and delta_c > 0");
        }
        Ok(())
    }

    /// Gudmundson covariance `σ_s² 2^{−d/δ_c}`.
    pub fn covariance(&self, distance: f64) -> f64 {
        self.sigma2_s * (-distance / self.delta_c).exp2()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FadingParams {
    /// σ_f² in dB².
    pub sigma2_f: f64,
    /// μ_f in dB.
    #[serde(default)]
    pub mean_f: f64,
}

impl FadingParams {
    pub fn new(sigma2_f: f64, mean_f: f64) -> Result<Self> {
        let p = Self { sigma2_f, mean_f };
        p.validate()?;
        Ok(p)
    }

    pub fn none() -> Self {
        Self {
            sigma2_f: 0.0,
            mean_f: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_f >= 0.0) || !self.mean_f.is_finite() {
            return invalid("fading requires sigma2_f >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub transmitters: Vec<Transmitter>,
    /// 2 = free space.
    pub path_loss_exponent: f64,
    pub shadowing: ShadowingParams,
    pub fading: FadingParams,
    /// Tomographic spatial loss field; replaces the shadowing field when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slf: Option<Slf>,
    pub seed: u64,
    /// Distance floor for the Friis singularity. Defaults to one cell
    /// diagonal of the grid the environment is realised on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_floor: Option<f64>,
}

impl Environment {
    pub fn free_space(transmitters: Vec<Transmitter>, seed: u64) -> Self {
        Self {
            transmitters,
            path_loss_exponent: 2.0,
            shadowing: ShadowingParams::none(),
            fading: FadingParams::none(),
            slf: None,
            seed,
            distance_floor: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.path_loss_exponent > 0.0) {
            return invalid("path loss exponent must be positive");
        }
        self.shadowing.validate()?;
        self.fading.validate()?;
        if let Some(d) = self.distance_floor {
            if !(d > 0.0) {
                return invalid("distance floor must be positive");
            }
        }
        for tx in &self.transmitters {
            if let Some(c) = &tx.psd_coefficients {
                if c.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    return invalid("PSD coefficients must be non-negative");
                }
            }
        }
        Ok(())
    }

    /// Draws the random fields of this environment on `grid`.
    pub fn realize(&self, grid: &Grid) -> Result<Realization> {
        self.validate()?;
        let d_min = self.distance_floor.unwrap_or_else(|| grid.cell_diagonal());
        let shadowing = if self.slf.is_some() {
            GridMap::constant(grid.clone(), 0.0, Unit::Db)
        } else {
            let field = sample_shadowing_field(grid, &self.shadowing, self.seed)?;
            let values = field.values().iter().map(|v| v + self.shadowing.mean_s).collect();
            GridMap::new(grid.clone(), values, Unit::Db)?
        };
        let mut rng = seeded_rng(self.seed, STREAM_FADING);
        let sd = self.fading.sigma2_f.sqrt();
        let fading = self
            .transmitters
            .iter()
            .map(|_| {
                standard_normals(&mut rng, grid.len())
                    .into_iter()
                    .map(|z| self.fading.mean_f + sd * z)
                    .collect()
            })
            .collect();
        Ok(Realization {
            env: self.clone(),
            grid: grid.clone(),
            d_min,
            shadowing,
            fading,
        })
    }
}

/// Linear Friis-type gain `1 / max(d, d_min)^exponent`.
pub fn friis_gain(tx: &Location, rx: &Location, exponent: f64, d_min: f64) -> f64 {
    let d = tx.distance(rx).max(d_min);
    d.powf(-exponent)
}

/// Path-loss gain in dB (non-positive for d ≥ 1 m).
pub fn path_loss_db(tx: &Location, rx: &Location, exponent: f64, d_min: f64) -> f64 {
    -10.0 * exponent * tx.distance(rx).max(d_min).log10()
}

/// Factored Gudmundson covariance over the points of a grid.
pub struct ShadowingSampler {
    grid: Grid,
    factor: Option<DMatrix<f64>>,
}

impl ShadowingSampler {
    pub fn new(grid: &Grid, params: &ShadowingParams) -> Result<Self> {
        params.validate()?;
        if grid.len() > MAX_SHADOWING_POINTS {
            return invalid(format!(
                "shadowing sampler supports at most {MAX_SHADOWING_POINTS} grid points, got {}",
                grid.len()
            ));
        }
        if params.sigma2_s == 0.0 {
            return Ok(Self {
                grid: grid.clone(),
                factor: None,
            });
        }
        let pts = grid.points();
        let n = pts.len();
        let cov = DMatrix::from_fn(n, n, |i, j| params.covariance(pts[i].distance(&pts[j])));
        let (chol, _) = cholesky_with_jitter(&cov)?;
        Ok(Self {
            grid: grid.clone(),
            factor: Some(chol.unpack()),
        })
    }

    /// One zero-mean draw, in dB.
    pub fn sample(&self, seed: u64) -> GridMap {
        let n = self.grid.len();
        let values = match &self.factor {
            None => vec![0.0; n],
            Some(l) => {
                let mut rng = seeded_rng(seed, STREAM_SHADOWING);
                let z = DVector::from_vec(standard_normals(&mut rng, n));
                (l * z).iter().copied().collect()
            }
        };
        GridMap::new(self.grid.clone(), values, Unit::Db).expect("one value per point")
    }
}

/// One zero-mean Gudmundson shadowing draw on `grid` (dB).
pub fn sample_shadowing_field(grid: &Grid, params: &ShadowingParams, seed: u64) -> Result<GridMap> {
    Ok(ShadowingSampler::new(grid, params)?.sample(seed))
}

/// An environment with its random fields drawn on a grid. Shadowing and
/// fading at off-grid locations use the nearest grid point.
#[derive(Clone, Debug)]
pub struct Realization {
    env: Environment,
    grid: Grid,
    d_min: f64,
    /// Shadowing attenuation in dB, including μ_s.
    shadowing: GridMap,
    /// Per transmitter, fading attenuation in dB per grid point, including μ_f.
    fading: Vec<Vec<f64>>,
}

impl Realization {
    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn distance_floor(&self) -> f64 {
        self.d_min
    }

    pub fn shadowing_field(&self) -> &GridMap {
        &self.shadowing
    }

    /// Shadowing attenuation (dB) of the link `a`–`b`: the SLF line integral
    /// when a spatial loss field is present, otherwise the shadowing field at
    /// the link midpoint.
    pub fn shadowing_db(&self, a: &Location, b: &Location) -> f64 {
        match &self.env.slf {
            Some(slf) => {
                if a.distance(b) <= 1e-12 {
                    0.0
                } else {
                    line_integral(slf, a, b, &WeightModel::Piecewise).expect("non-degenerate link")
                }
            }
            None => self.shadowing.value_at(&a.midpoint(b)),
        }
    }

    /// Channel gain of a link in dB, without fast fading. Symmetric in its
    /// endpoints.
    pub fn link_gain_db(&self, a: &Location, b: &Location) -> f64 {
        path_loss_db(a, b, self.env.path_loss_exponent, self.d_min) - self.shadowing_db(a, b)
    }

    /// Channel gain (dB) from transmitter `tx` to `x`, including fast fading.
    pub fn channel_gain_db(&self, tx: usize, x: &Location) -> f64 {
        let t = &self.env.transmitters[tx];
        self.link_gain_db(&t.location, x) - self.fading[tx][self.grid.nearest_index(x)]
    }

    /// Received power in watts: `Σ_s p_s h_s(x)` over uncorrelated sources.
    pub fn received_power(&self, x: &Location) -> f64 {
        self.env
            .transmitters
            .iter()
            .enumerate()
            .map(|(s, t)| db_to_linear(t.power_db + self.channel_gain_db(s, x)))
            .sum()
    }

    pub fn power_map(&self) -> GridMap {
        self.to_grid_map(&self.grid.clone())
    }

    /// PSD at `x` sampled on the basis frequency grid.
    pub fn psd_at(&self, x: &Location, basis: &BemBasis) -> Result<Vec<f64>> {
        let mut psd = vec![0.0; basis.frequencies().len()];
        for (s, t) in self.env.transmitters.iter().enumerate() {
            let coeffs = t
                .psd_coefficients
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("transmitter has no PSD coefficients".into()))?;
            if coeffs.len() != basis.len() {
                return Err(Error::DimensionMismatch {
                    expected: basis.len(),
                    found: coeffs.len(),
                });
            }
            let gain = db_to_linear(self.channel_gain_db(s, x));
            for (c, &w) in coeffs.iter().enumerate() {
                for (j, p) in psd.iter_mut().enumerate() {
                    *p += gain * w * basis.value(c, j);
                }
            }
        }
        Ok(psd)
    }
}

impl MapEstimator for Realization {
    fn evaluate(&self, loc: &Location) -> f64 {
        self.received_power(loc)
    }

    fn unit(&self) -> Unit {
        Unit::Watts
    }
}

/// Ground-truth power map (watts).
pub fn true_power_map(env: &Environment, grid: &Grid) -> Result<GridMap> {
    if env.transmitters.is_empty() {
        return invalid("at least one transmitter is required");
    }
    Ok(env.realize(grid)?.power_map())
}

pub fn psd_of(real: &Realization, loc: &Location, basis: &BemBasis) -> Result<Vec<f64>> {
    real.psd_at(loc, basis)
}

/// Point measurements `m_n = p(x_n) + z_n` with i.i.d. zero-mean Gaussian noise.
pub fn draw_measurements(
    source: &dyn MapEstimator,
    locations: &[Location],
    noise_variance: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if !(noise_variance >= 0.0) {
        return invalid("noise variance must be non-negative");
    }
    let mut rng = seeded_rng(seed, 3);
    let sd = noise_variance.sqrt();
    let z = standard_normals(&mut rng, locations.len());
    let ms = locations
        .iter()
        .zip(z)
        .map(|(l, z)| Measurement::at(*l, source.evaluate(l) + sd * z))
        .collect();
    MeasurementSet::new(ms, noise_variance, source.unit())
}

/// Link measurements `m_n = h_dB(a_n, b_n) + z_n`.
pub fn draw_link_measurements(
    real: &Realization,
    pairs: &[(Location, Location)],
    noise_variance: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if !(noise_variance >= 0.0) {
        return invalid("noise variance must be non-negative");
    }
    let mut rng = seeded_rng(seed, 4);
    let sd = noise_variance.sqrt();
    let z = standard_normals(&mut rng, pairs.len());
    let ms = pairs
        .iter()
        .zip(z)
        .map(|((a, b), z)| Measurement::link(*a, *b, real.link_gain_db(a, b) + sd * z))
        .collect();
    MeasurementSet::new(ms, noise_variance, Unit::Db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Region;

    fn line_grid(n: usize, len: f64) -> Grid {
        Grid::new(Region::interval(0.0, len).unwrap(), vec![n]).unwrap()
    }

    #[test]
    fn friis_examples() {
        let o = Location::x(0.0);
        assert_eq!(friis_gain(&o, &Location::x(2.0), 2.0, 0.1), 0.25);
        assert_eq!(friis_gain(&o, &Location::x(1.0), 3.7, 0.1), 1.0);
        assert!((friis_gain(&o, &Location::x(10.0), 3.0, 0.1) - 1e-3).abs() < 1e-15);
        // Singularity guard.
        assert_eq!(friis_gain(&o, &o, 2.0, 0.5), 4.0);
    }

    #[test]
    fn zero_variance_shadowing_is_zero() {
        let g = line_grid(10, 10.0);
        let f = sample_shadowing_field(&g, &ShadowingParams::new(0.0, 2.0, 0.0).unwrap(), 7).unwrap();
        assert!(f.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shadowing_is_seed_deterministic() {
        let g = line_grid(20, 10.0);
        let p = ShadowingParams::new(4.0, 2.0, 0.0).unwrap();
        let a = sample_shadowing_field(&g, &p, 11).unwrap();
        let b = sample_shadowing_field(&g, &p, 11).unwrap();
        let c = sample_shadowing_field(&g, &p, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn shadowing_lag_zero_variance() {
        let g = line_grid(10, 10.0);
        let p = ShadowingParams::new(3.0, 2.0, 0.0).unwrap();
        let sampler = ShadowingSampler::new(&g, &p).unwrap();
        let draws = 2000;
        let mut acc = 0.0;
        for s in 0..draws {
            let f = sampler.sample(s);
            acc += f.values().iter().map(|v| v * v).sum::<f64>() / g.len() as f64;
        }
        let var = acc / draws as f64;
        assert!((var - 3.0).abs() <= 0.3, "variance {var}");
    }

    #[test]
    fn sampler_rejects_huge_grids() {
        let g = Grid::new(Region::rect(0.0, 0.0, 1.0, 1.0).unwrap(), vec![101, 100]).unwrap();
        assert!(ShadowingSampler::new(&g, &ShadowingParams::new(1.0, 1.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn single_tx_free_space_power() {
        let g = line_grid(4, 4.0);
        let env = Environment::free_space(vec![Transmitter::new(Location::x(-1.5), 0.0)], 1);
        let map = true_power_map(&env, &g).unwrap();
        // First point is at 0.5, distance 2.
        assert!((map.values()[0] - 0.25).abs() < 1e-15);
        assert_eq!(map.unit(), Unit::Watts);
    }

    #[test]
    fn superposition_of_transmitters() {
        let g = Grid::new(Region::rect(0.0, 0.0, 10.0, 10.0).unwrap(), vec![8, 8]).unwrap();
        let mk = |txs: Vec<Transmitter>| Environment {
            transmitters: txs,
            path_loss_exponent: 3.0,
            shadowing: ShadowingParams::new(4.0, 3.0, 0.0).unwrap(),
            fading: FadingParams::none(),
            slf: None,
            seed: 5,
            distance_floor: None,
        };
        let t1 = Transmitter::new(Location::xy(1.0, 2.0), 3.0);
        let t2 = Transmitter::new(Location::xy(8.0, 7.0), -2.0);
        let both = true_power_map(&mk(vec![t1.clone(), t2.clone()]), &g).unwrap();
        let a = true_power_map(&mk(vec![t1]), &g).unwrap();
        let b = true_power_map(&mk(vec![t2]), &g).unwrap();
        let sum = a.add(&b).unwrap();
        for (x, y) in both.values().iter().zip(sum.values()) {
            assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn link_reciprocity_and_unit_distance() {
        let g = Grid::new(Region::rect(0.0, 0.0, 10.0, 10.0).unwrap(), vec![10, 10]).unwrap();
        let env = Environment {
            shadowing: ShadowingParams::new(6.0, 2.0, 0.0).unwrap(),
            ..Environment::free_space(vec![], 3)
        };
        let real = env.realize(&g).unwrap();
        let a = Location::xy(1.0, 2.0);
        let b = Location::xy(7.5, 3.3);
        assert_eq!(real.link_gain_db(&a, &b), real.link_gain_db(&b, &a));

        let free = Environment { distance_floor: Some(0.1), ..Environment::free_space(vec![], 3) }.realize(&g).unwrap();
        let set = draw_link_measurements(&free, &[(Location::xy(2.0, 2.0), Location::xy(3.0, 2.0))], 0.0, 1).unwrap();
        assert!(set.measurements()[0].value.abs() < 1e-12);
    }

    #[test]
    fn noiseless_draws_match_map() {
        let g = line_grid(5, 5.0);
        let map = GridMap::new(g.clone(), vec![1.0, 2.0, 3.0, 4.0, 5.0], Unit::Watts).unwrap();
        let set = draw_measurements(&map, &g.points(), 0.0, 9).unwrap();
        assert_eq!(set.values(), map.values());
    }

    #[test]
    fn noise_moments() {
        let g = line_grid(1, 1.0);
        let map = GridMap::new(g, vec![2.0], Unit::Watts).unwrap();
        let locs = vec![Location::x(0.5); 10_000];
        let s2 = 0.04;
        let set = draw_measurements(&map, &locs, s2, 21).unwrap();
        let e: Vec<f64> = set.values().iter().map(|v| v - 2.0).collect();
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        let var = e.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (e.len() - 1) as f64;
        assert!(mean.abs() <= 3.0 * s2.sqrt() / 100.0);
        assert!((var - s2).abs() <= 0.05 * s2);
    }

    #[test]
    fn fading_is_spatially_white() {
        let g = line_grid(200, 200.0);
        let env = Environment {
            fading: FadingParams::new(4.0, 0.0).unwrap(),
            ..Environment::free_space(vec![Transmitter::new(Location::x(-10.0), 0.0)], 0)
        };
        let mut lag1 = 0.0;
        let mut lag0 = 0.0;
        let reps = 50;
        for seed in 0..reps {
            let real = Environment { seed, ..env.clone() }.realize(&g).unwrap();
            let f = &real.fading[0];
            lag0 += f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
            lag1 += f.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (f.len() - 1) as f64;
        }
        let rho = lag1 / lag0;
        // 50 * 199 pairs: standard error ≈ 0.01.
        assert!(rho.abs() < 0.04, "lag-1 correlation {rho}");
    }

    #[test]
    fn uniform_slf_attenuation_matches_quadrature() {
        let g = Grid::new(Region::rect(0.0, 0.0, 10.0, 10.0).unwrap(), vec![10, 10]).unwrap();
        let c = 0.3;
        let slf = Slf::new(GridMap::constant(g.clone(), c, Unit::Unitless)).unwrap();
        let tx = Location::xy(1.2, 1.7);
        let env = Environment {
            slf: Some(slf),
            ..Environment::free_space(vec![Transmitter::new(tx, 0.0)], 4)
        };
        let real = env.realize(&g).unwrap();
        let x = Location::xy(8.3, 6.1);
        let d = tx.distance(&x);
        // Midpoint-rule quadrature of the constant integrand.
        let n = 10_000;
        let integral: f64 = (0..n).map(|_| c * d / n as f64).sum();
        let atten_db = integral / d.sqrt();
        let expected = d.powf(-2.0) * db_to_linear(-atten_db);
        assert!((real.received_power(&x) - expected).abs() <= 1e-9 * expected);
    }
}

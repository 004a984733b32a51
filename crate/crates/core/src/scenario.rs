//! JSON descriptions of scenarios and experiments.

use std::fs::File;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::Regularizer;
use crate::error::{invalid, Result};
use crate::formats::read_grid_map;
use crate::geometry::{Grid, Location, Region};
use crate::propmap::Slf;
use crate::psd::BemBasis;
use crate::ratelimited::{FilterBank, Quantizer};
use crate::simulator::{seeded_rng, Environment};

const STREAM_PLAN: u64 = 41;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub region: Region,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.region.clone(), self.counts.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementPlan {
    /// Uniformly drawn locations when `locations` is absent.
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub locations: Option<Vec<Location>>,
    #[serde(default)]
    pub noise_variance: f64,
}

impl MeasurementPlan {
    pub fn locations(&self, region: &Region, seed: u64) -> Result<Vec<Location>> {
        if let Some(l) = &self.locations {
            if l.iter().any(|p| !region.contains(p)) {
                return invalid("planned measurement location outside the region");
            }
            return Ok(l.clone());
        }
        if self.count == 0 {
            return invalid("measurement plan needs a count or explicit locations");
        }
        let mut rng = seeded_rng(seed, STREAM_PLAN);
        let (lo, hi) = (region.lower(), region.upper());
        (0..self.count)
            .map(|_| {
                let c: Vec<f64> = (0..region.dim()).map(|a| lo.get(a) + rng.random::<f64>() * (hi.get(a) - lo.get(a))).collect();
                Location::new(&c)
            })
            .collect()
    }
}

/// Raised-cosine BEM basis on a uniform frequency grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub f_min: f64,
    pub f_max: f64,
    pub frequencies: usize,
    pub centers: Vec<f64>,
    pub bandwidth: f64,
    pub rolloff: f64,
}

impl BasisSpec {
    pub fn build(&self) -> Result<BemBasis> {
        if self.frequencies < 2 || !(self.f_max > self.f_min) {
            return invalid("frequency grid needs two or more points on a non-empty band");
        }
        let n = self.frequencies;
        let freqs = (0..n).map(|k| self.f_min + (self.f_max - self.f_min) * k as f64 / (n - 1) as f64).collect();
        BemBasis::raised_cosine(freqs, self.centers.clone(), self.bandwidth, self.rolloff)
    }
}

/// Filter-bank sensing with scalar quantization; sensors sit at the
/// planned measurement locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationSpec {
    pub basis: BasisSpec,
    pub breakpoints: Vec<f64>,
    pub filter_seed: u64,
    pub branches: usize,
}

impl QuantizationSpec {
    pub fn quantizer(&self) -> Result<Quantizer> {
        Quantizer::new(self.breakpoints.clone())
    }

    pub fn filter_bank(&self, basis: &BemBasis, sensors: usize) -> Result<FilterBank> {
        FilterBank::pseudorandom(basis, sensors, self.branches, self.filter_seed)
    }
}

/// Environment plus evaluation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub environment: Environment,
    pub grid: GridSpec,
    /// Grid-map CSV of a spatial loss field, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slf_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<MeasurementPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantization: Option<QuantizationSpec>,
}

impl Scenario {
    /// Reads a scenario and resolves its SLF file reference.
    pub fn load(path: &Path) -> Result<Self> {
        let mut s: Scenario = serde_json::from_reader(File::open(path)?)?;
        if let Some(f) = &s.slf_file {
            let full = path.parent().unwrap_or(Path::new(".")).join(f);
            s.environment.slf = Some(Slf::new(read_grid_map(File::open(full)?)?)?);
        }
        s.environment.validate()?;
        s.grid.build()?;
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrigingMean {
    /// Constant mean equal to the sample mean of the measurements.
    #[default]
    Sample,
    /// Log-distance path loss from the scenario's single transmitter.
    PathLoss,
}

/// Registered estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    /// Least squares on the Friis basis of the known transmitters (watts).
    FriisLs,
    /// Lasso over a grid of candidate transmitter locations (watts).
    Lasso { lambda: f64 },
    /// Kernel ridge regression on dB values around their mean.
    Krr { sigma: f64, lambda: f64 },
    /// Simple kriging with the scenario's covariance model (dB).
    Kriging {
        #[serde(default)]
        mean: KrigingMean,
    },
    /// Nuclear-norm completion of the binned dB map (2D grids).
    Completion { lambda: f64 },
    /// Interval-penalty fit of BEM coefficient maps to quantized
    /// filter-bank powers.
    IntervalSvr {
        sigma: f64,
        lambda: f64,
        #[serde(default = "one")]
        penalty_weight: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::FriisLs => "friis_ls",
            Self::Lasso { .. } => "lasso",
            Self::Krr { .. } => "krr",
            Self::Kriging { .. } => "kriging",
            Self::Completion { .. } => "completion",
            Self::IntervalSvr { .. } => "interval_svr",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub measurements: Option<MeasurementPlan>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveySpec {
    pub budget: usize,
    #[serde(default)]
    pub travel_weight: f64,
    pub start: Location,
    #[serde(default)]
    pub noise_variance: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    Ring,
    Path,
    Complete,
    Edges { edges: Vec<(usize, usize)> },
}

impl Topology {
    pub fn edges(&self, agents: usize) -> Vec<(usize, usize)> {
        match self {
            Topology::Ring if agents > 2 => (0..agents).map(|a| (a, (a + 1) % agents)).collect(),
            Topology::Ring | Topology::Path => (1..agents).map(|a| (a - 1, a)).collect(),
            Topology::Complete => (0..agents).flat_map(|a| (a + 1..agents).map(move |b| (a, b))).collect(),
            Topology::Edges { edges } => edges.clone(),
        }
    }
}

/// Synthetic decentralized regression: every agent draws `rows` Gaussian
/// regressors and noisy responses of a common `θ₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmSpec {
    pub agents: usize,
    pub topology: Topology,
    pub dim: usize,
    pub rows: usize,
    pub rho: f64,
    pub regularizer: Regularizer,
    #[serde(default)]
    pub noise_variance: f64,
    pub tol: f64,
    pub max_rounds: usize,
    pub seed: u64,
}

//! Simple kriging of dB power under the log-normal decomposition
//! `p_dB(x) = P + l(x) − s(x) − f(x)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimator::MapEstimator;
use crate::geometry::{Location, Unit};
use crate::kernels::{fit_krr, Kernel};
use crate::linalg::cholesky_with_jitter;
use crate::measurement::MeasurementSet;
use crate::simulator::{path_loss_db, FadingParams, ShadowingParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanModel {
    Zero,
    Constant { value: f64 },
    /// `P + l(x)` with `l` the log-distance path loss from `tx`.
    PathLoss { tx: Location, power_db: f64, exponent: f64, d_min: f64 },
}

/// What the estimate targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `p_dB` including fast fading.
    #[default]
    Total,
    /// Fading treated as extra measurement noise.
    ShadowingOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub mean: MeanModel,
    pub shadowing: ShadowingParams,
    pub fading: FadingParams,
    #[serde(default)]
    pub target: Target,
}

pub fn build_covariance(shadowing: ShadowingParams, fading: FadingParams, mean: MeanModel) -> Result<CovarianceModel> {
    shadowing.validate()?;
    fading.validate()?;
    if let MeanModel::PathLoss { d_min, exponent, .. } = &mean {
        if !(*d_min > 0.0) || !(*exponent > 0.0) {
            return invalid("path-loss mean needs positive exponent and distance floor");
        }
    }
    Ok(CovarianceModel { mean, shadowing, fading, target: Target::Total })
}

impl CovarianceModel {
    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }

    /// `μ_p(x)`
    pub fn mean_at(&self, x: &Location) -> f64 {
        let offset = self.shadowing.mean_s + self.fading.mean_f;
        match &self.mean {
            MeanModel::Zero => 0.0,
            MeanModel::Constant { value } => *value,
            MeanModel::PathLoss { tx, power_db, exponent, d_min } => {
                power_db + path_loss_db(tx, x, *exponent, *d_min) - offset
            }
        }
    }

    /// Covariance between two observations; `same_index` says whether they
    /// are the same observation (fading is redrawn per observation).
    pub fn cov(&self, a: &Location, b: &Location, same_index: bool) -> f64 {
        let fading = if same_index && self.target == Target::Total { self.fading.sigma2_f } else { 0.0 };
        self.shadowing.covariance(a.distance(b)) + fading
    }

    /// `Var[p(x)]` of the estimation target.
    pub fn prior_variance(&self) -> f64 {
        match self.target {
            Target::Total => self.shadowing.sigma2_s + self.fading.sigma2_f,
            Target::ShadowingOnly => self.shadowing.sigma2_s,
        }
    }

    /// Per-measurement noise on top of `C_pp`.
    fn noise(&self, data: &MeasurementSet) -> f64 {
        match self.target {
            Target::Total => data.noise_variance(),
            Target::ShadowingOnly => data.noise_variance() + self.fading.sigma2_f,
        }
    }

    /// Zero-mean copy of this model.
    pub fn centred(&self) -> Self {
        let mut m = self.clone();
        m.mean = MeanModel::Zero;
        m.shadowing.mean_s = 0.0;
        m.fading.mean_f = 0.0;
        m
    }
}

#[derive(Clone, Debug)]
pub struct KrigingEstimate {
    model: CovarianceModel,
    locations: Vec<Location>,
    weights: DVector<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
    jitter: f64,
}

/// Fits `p̂(x) = μ_p(x) + Cov[p(x), m] Cov[m,m]⁻¹ (m − E[m])` on dB data.
pub fn fit_kriging(model: &CovarianceModel, data: &MeasurementSet) -> Result<KrigingEstimate> {
    data.unit().ensure(Unit::Db)?;
    model.shadowing.validate()?;
    model.fading.validate()?;
    let locations = data.locations();
    let n = locations.len();
    if n == 0 {
        return Ok(KrigingEstimate { model: model.clone(), locations, weights: DVector::zeros(0), factor: None, jitter: 0.0 });
    }
    let noise = model.noise(data);
    let mut c = DMatrix::from_fn(n, n, |i, j| model.cov(&locations[i], &locations[j], i == j));
    for i in 0..n {
        c[(i, i)] += noise;
    }
    let (factor, jitter) = cholesky_with_jitter(&c)?;
    if jitter > 0.0 {
        log::warn!("kriging covariance needed jitter {jitter:e}");
    }
    let centred = DVector::from_iterator(n, data.measurements().iter().map(|m| m.value - model.mean_at(&m.location)));
    let weights = factor.solve(&centred);
    Ok(KrigingEstimate { model: model.clone(), locations, weights, factor: Some(factor), jitter })
}

impl KrigingEstimate {
    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn cross(&self, x: &Location) -> DVector<f64> {
        DVector::from_iterator(self.locations.len(), self.locations.iter().map(|l| self.model.cov(x, l, false)))
    }

    /// LMMSE error variance, clamped to `[0, prior]`.
    pub fn posterior_variance(&self, x: &Location) -> f64 {
        let prior = self.model.prior_variance();
        let Some(f) = &self.factor else { return prior };
        let c = self.cross(x);
        let reduction = c.dot(&f.solve(&c));
        (prior - reduction).clamp(0.0, prior)
    }
}

impl MapEstimator for KrigingEstimate {
    fn evaluate(&self, x: &Location) -> f64 {
        self.model.mean_at(x) + self.cross(x).dot(&self.weights)
    }

    fn unit(&self) -> Unit {
        Unit::Db
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub max_deviation: f64,
    pub probes: usize,
    /// Effective KRR weight `λ = σ_z² / N`.
    pub lambda: f64,
}

/// Compares kriging with KRR using `κ = Cov` and `λN = σ_z²` on mean-centred
/// data over the probe points.
pub fn kriging_as_krr_check(model: &CovarianceModel, data: &MeasurementSet, probes: &[Location]) -> Result<EquivalenceReport> {
    if data.is_empty() {
        return invalid("equivalence check needs at least one measurement");
    }
    let kriged = fit_kriging(model, data)?;
    let n = data.len();
    let nugget = if model.target == Target::Total { model.fading.sigma2_f } else { 0.0 };
    let kernel = Kernel::covariance(model.shadowing.sigma2_s, model.shadowing.delta_c, nugget)?;
    let lambda = model.noise(data) / n as f64;
    let centred: Vec<f64> = data.measurements().iter().map(|m| m.value - model.mean_at(&m.location)).collect();
    let krr = fit_krr(&kernel, &data.with_values(&centred, Unit::Db)?, lambda)?;
    let max_deviation = probes
        .iter()
        .map(|x| (kriged.evaluate(x) - (model.mean_at(x) + krr.evaluate(x))).abs())
        .fold(0.0, f64::max);
    Ok(EquivalenceReport { max_deviation, probes: probes.len(), lambda })
}

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Location, Unit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub location: Location,
    pub value: f64,
    /// Second link endpoint for propagation-map datasets.
    pub second_location: Option<Location>,
    pub frequency_index: Option<usize>,
    pub time_index: Option<usize>,
}

impl Measurement {
    pub fn at(location: Location, value: f64) -> Self {
        Self {
            location,
            value,
            second_location: None,
            frequency_index: None,
            time_index: None,
        }
    }

    pub fn link(a: Location, b: Location, value: f64) -> Self {
        Self {
            second_location: Some(b),
            ..Self::at(a, value)
        }
    }
}

/// Ordered measurements sharing dimension and unit, plus the noise variance
/// σ_z² of the acquisition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    measurements: Vec<Measurement>,
    noise_variance: f64,
    unit: Unit,
}

impl MeasurementSet {
    pub fn new(measurements: Vec<Measurement>, noise_variance: f64, unit: Unit) -> Result<Self> {
        if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
            return invalid("noise variance must be finite and non-negative");
        }
        if let Some(first) = measurements.first() {
            let dim = first.location.dim();
            let links = first.second_location.is_some();
            for m in &measurements {
                if !m.value.is_finite() {
                    return invalid("measurement values must be finite");
                }
                if m.location.dim() != dim {
                    return invalid("measurements must share dimensionality");
                }
                if m.second_location.is_some() != links {
                    return invalid("a dataset cannot mix point and link measurements");
                }
                if let Some(b) = &m.second_location {
                    if b.dim() != dim {
                        return invalid("link endpoints must share dimensionality");
                    }
                }
            }
        }
        Ok(Self {
            measurements,
            noise_variance,
            unit,
        })
    }

    pub fn from_points(points: &[(Location, f64)], noise_variance: f64, unit: Unit) -> Result<Self> {
        Self::new(
            points.iter().map(|(l, v)| Measurement::at(*l, *v)).collect(),
            noise_variance,
            unit,
        )
    }

    pub fn empty(unit: Unit) -> Self {
        Self {
            measurements: Vec::new(),
            noise_variance: 0.0,
            unit,
        }
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn is_link_dataset(&self) -> bool {
        self.measurements
            .first()
            .is_some_and(|m| m.second_location.is_some())
    }

    pub fn dim(&self) -> Option<usize> {
        self.measurements.first().map(|m| m.location.dim())
    }

    pub fn locations(&self) -> Vec<Location> {
        self.measurements.iter().map(|m| m.location).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.measurements.iter().map(|m| m.value).collect()
    }

    /// Appends a measurement, re-validating consistency.
    pub fn push(&mut self, m: Measurement) -> Result<()> {
        let mut all = std::mem::take(&mut self.measurements);
        all.push(m);
        let checked = MeasurementSet::new(all, self.noise_variance, self.unit)?;
        *self = checked;
        Ok(())
    }

    pub fn with_values(&self, values: &[f64], unit: Unit) -> Result<Self> {
        if values.len() != self.len() {
            return invalid("value count does not match measurement count");
        }
        let ms = self
            .measurements
            .iter()
            .zip(values)
            .map(|(m, &v)| Measurement { value: v, ..m.clone() })
            .collect();
        Self::new(ms, self.noise_variance, unit)
    }
}

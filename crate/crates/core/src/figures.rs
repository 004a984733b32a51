//! One-dimensional toy experiments: a road `[0, 100]` m with two
//! transmitters, estimated by a transmitter-aware parametric model, a
//! degree-13 polynomial and kernel ridge regression.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::MapEstimator;
use crate::geometry::{db_to_linear, linear_to_db, Location, Region, Unit};
use crate::kernels::{fit_krr, Kernel, KernelExpansion};
use crate::measurement::MeasurementSet;
use crate::parametric::{fit_ls, friis_basis, polynomial_basis};
use crate::simulator::{friis_gain, seeded_rng, standard_normals};
use crate::svg::{LinePlot, Series};

const STREAM_LOCATIONS: u64 = 31;
const STREAM_NOISE: u64 = 32;
const STREAM_SAMPLE: u64 = 33;
/// Floor for converting non-positive linear estimates to dB.
const DB_FLOOR: f64 = -100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureName {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl FigureName {
    pub const ALL: [FigureName; 5] = [Self::Fig1, Self::Fig2, Self::Fig3, Self::Fig4, Self::Fig5];
}

impl fmt::Display for FigureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Fig1 => "fig1",
            Self::Fig2 => "fig2",
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
            Self::Fig5 => "fig5",
        };
        f.write_str(s)
    }
}

impl FromStr for FigureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.to_string() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown figure '{s}' (expected fig1..fig5)")))
    }
}

/// Free-space road scenario; powers in watts, measurements in dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyScenario {
    pub length: f64,
    pub transmitters: Vec<f64>,
    pub powers: Vec<f64>,
    pub exponent: f64,
    pub d_min: f64,
    pub noise_variance_db: f64,
    /// Measurements for Figs. 1, 2 and 4; Fig. 5 uses twice as many.
    pub measurements: usize,
    pub kernel_width: f64,
    pub lambda: f64,
    pub polynomial_degree: u32,
    pub eval_points: usize,
}

impl Default for ToyScenario {
    fn default() -> Self {
        Self {
            length: 100.0,
            transmitters: vec![30.0, 70.0],
            powers: vec![1.0, 0.5],
            exponent: 2.0,
            d_min: 2.0,
            noise_variance_db: 0.25,
            measurements: 16,
            kernel_width: 6.0,
            lambda: 1e-3,
            polynomial_degree: 13,
            eval_points: 401,
        }
    }
}

impl ToyScenario {
    pub fn truth_db(&self, x: f64) -> f64 {
        let loc = Location::x(x);
        let p: f64 = self
            .transmitters
            .iter()
            .zip(&self.powers)
            .map(|(t, p)| p * friis_gain(&Location::x(*t), &loc, self.exponent, self.d_min))
            .sum();
        linear_to_db(p).expect("positive power")
    }

    pub fn eval_grid(&self) -> Vec<f64> {
        let n = self.eval_points.max(2);
        (0..n).map(|k| self.length * k as f64 / (n - 1) as f64).collect()
    }

    /// Measurement locations for a figure: uniform for Figs. 1 and 2,
    /// denser on the left half for Figs. 4 and 5.
    pub fn locations(&self, count: usize, clustered: bool, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed, STREAM_LOCATIONS);
        let mut xs: Vec<f64> = (0..count)
            .map(|_| {
                let u: f64 = rng.random();
                if clustered {
                    // Density 3:1 between the left and right halves.
                    let half = self.length / 2.0;
                    if rng.random::<f64>() < 0.75 { u * half } else { half + u * half }
                } else {
                    u * self.length
                }
            })
            .collect();
        xs.sort_by(f64::total_cmp);
        xs
    }

    pub fn measure(&self, xs: &[f64], seed: u64) -> Result<MeasurementSet> {
        let mut rng = seeded_rng(seed, STREAM_NOISE);
        let z = standard_normals(&mut rng, xs.len());
        let sd = self.noise_variance_db.sqrt();
        let points: Vec<(Location, f64)> =
            xs.iter().zip(z).map(|(&x, z)| (Location::x(x), self.truth_db(x) + sd * z)).collect();
        MeasurementSet::from_points(&points, self.noise_variance_db, Unit::Db)
    }

    fn region(&self) -> Result<Region> {
        Region::interval(0.0, self.length)
    }

    /// Least squares on the Friis basis of the known transmitters, fitted to
    /// the measurements converted to watts.
    pub fn fit_parametric(&self, data: &MeasurementSet) -> Result<Box<dyn MapEstimator>> {
        let txs: Vec<Location> = self.transmitters.iter().map(|t| Location::x(*t)).collect();
        let basis = friis_basis(&txs, self.exponent, self.d_min)?;
        let watts: Vec<f64> = data.values().iter().map(|v| db_to_linear(*v)).collect();
        let est = fit_ls(&basis, &data.with_values(&watts, Unit::Watts)?)?;
        Ok(Box::new(InDb(est)))
    }

    pub fn fit_polynomial(&self, data: &MeasurementSet) -> Result<Box<dyn MapEstimator>> {
        let basis = polynomial_basis(self.polynomial_degree, &self.region()?)?;
        Ok(Box::new(fit_ls(&basis, data)?))
    }

    /// Kernel ridge regression around the sample mean.
    pub fn fit_krr(&self, data: &MeasurementSet) -> Result<Box<dyn MapEstimator>> {
        let mean = data.values().iter().sum::<f64>() / data.len() as f64;
        let centred: Vec<f64> = data.values().iter().map(|v| v - mean).collect();
        let est = fit_krr(&Kernel::rbf(self.kernel_width)?, &data.with_values(&centred, Unit::Db)?, self.lambda)?;
        Ok(Box::new(Offset(est, mean)))
    }

    /// Mean squared error (dB²) over the evaluation grid.
    pub fn test_mse(&self, est: &dyn MapEstimator) -> f64 {
        let xs = self.eval_grid();
        xs.iter().map(|&x| (est.evaluate(&Location::x(x)) - self.truth_db(x)).powi(2)).sum::<f64>() / xs.len() as f64
    }
}

struct InDb<E>(E);

impl<E: MapEstimator> MapEstimator for InDb<E> {
    fn evaluate(&self, loc: &Location) -> f64 {
        linear_to_db(self.0.evaluate(loc)).unwrap_or(DB_FLOOR).max(DB_FLOOR)
    }

    fn unit(&self) -> Unit {
        Unit::Db
    }
}

struct Offset(KernelExpansion, f64);

impl MapEstimator for Offset {
    fn evaluate(&self, loc: &Location) -> f64 {
        self.0.evaluate(loc) + self.1
    }

    fn unit(&self) -> Unit {
        Unit::Db
    }
}

/// One row of a figure CSV. Grid rows leave `measurement` empty; marker rows
/// carry the measured value at their location.
#[derive(Clone, Debug, PartialEq)]
pub struct FigureRow {
    pub x: f64,
    pub truth: f64,
    pub estimate: Option<f64>,
    pub measurement: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FigureOutput {
    pub name: FigureName,
    pub title: String,
    pub rows: Vec<FigureRow>,
    /// Test MSE in dB² for the estimation figures.
    pub test_mse: Option<f64>,
    /// Number of kernel terms of the Fig. 3 sample.
    pub expansion_terms: Option<usize>,
}

fn estimation_rows(scn: &ToyScenario, est: &dyn MapEstimator, data: &MeasurementSet) -> Vec<FigureRow> {
    let mut rows: Vec<FigureRow> = scn
        .eval_grid()
        .into_iter()
        .map(|x| FigureRow { x, truth: scn.truth_db(x), estimate: Some(est.evaluate(&Location::x(x))), measurement: None })
        .collect();
    for m in data.measurements() {
        let x = m.location.get(0);
        rows.push(FigureRow { x, truth: scn.truth_db(x), estimate: Some(est.evaluate(&m.location)), measurement: Some(m.value) });
    }
    rows.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.measurement.is_some().cmp(&b.measurement.is_some())));
    rows
}

/// Reproduces one toy figure; a pure function of `(name, scenario, seed)`.
pub fn reproduce(name: FigureName, scn: &ToyScenario, seed: u64) -> Result<FigureOutput> {
    if scn.transmitters.len() != scn.powers.len() || scn.transmitters.is_empty() {
        return invalid("one power per transmitter is required");
    }
    let estimation = |count: usize, clustered: bool, title: &str, fit: &dyn Fn(&MeasurementSet) -> Result<Box<dyn MapEstimator>>| {
        let xs = scn.locations(count, clustered, seed);
        let data = scn.measure(&xs, seed)?;
        let est = fit(&data)?;
        Ok::<_, Error>(FigureOutput {
            name,
            title: title.into(),
            rows: estimation_rows(scn, est.as_ref(), &data),
            test_mse: Some(scn.test_mse(est.as_ref())),
            expansion_terms: None,
        })
    };
    match name {
        FigureName::Fig1 => {
            estimation(scn.measurements, false, "Parametric estimator with known transmitters", &|d| scn.fit_parametric(d))
        }
        FigureName::Fig2 => estimation(
            scn.measurements,
            false,
            &format!("Least-squares polynomial of degree {}", scn.polynomial_degree),
            &|d| scn.fit_polynomial(d),
        ),
        FigureName::Fig3 => {
            let mut rng = seeded_rng(seed, STREAM_SAMPLE);
            let centroids: Vec<Location> = (0..5).map(|_| Location::x(rng.random::<f64>() * scn.length)).collect();
            let coefficients = standard_normals(&mut rng, 5);
            let f = KernelExpansion::new(Kernel::rbf(scn.kernel_width)?, centroids, coefficients, Unit::Unitless)?;
            let mut rows: Vec<FigureRow> = scn
                .eval_grid()
                .into_iter()
                .map(|x| FigureRow { x, truth: f.evaluate(&Location::x(x)), estimate: None, measurement: None })
                .collect();
            for (c, a) in f.centroids.iter().zip(&f.coefficients) {
                rows.push(FigureRow { x: c.get(0), truth: f.evaluate(c), estimate: None, measurement: Some(*a) });
            }
            rows.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.measurement.is_some().cmp(&b.measurement.is_some())));
            Ok(FigureOutput {
                name,
                title: "RKHS function with 5 kernel terms".into(),
                rows,
                test_mse: None,
                expansion_terms: Some(f.centroids.len()),
            })
        }
        FigureName::Fig4 => estimation(scn.measurements, true, "Kernel ridge regression", &|d| scn.fit_krr(d)),
        FigureName::Fig5 => {
            estimation(2 * scn.measurements, true, "Kernel ridge regression, twice the measurements", &|d| scn.fit_krr(d))
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_figure_csv<W: Write>(fig: &FigureOutput, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "truth", "estimate", "measurement"])?;
    for r in &fig.rows {
        wr.write_record([r.x.to_string(), r.truth.to_string(), opt(r.estimate), opt(r.measurement)])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn figure_svg(fig: &FigureOutput) -> String {
    let grid: Vec<&FigureRow> = fig.rows.iter().filter(|r| r.measurement.is_none()).collect();
    let marks: Vec<(f64, f64)> = fig.rows.iter().filter_map(|r| r.measurement.map(|m| (r.x, m))).collect();
    let truth_label = if fig.name == FigureName::Fig3 { "f(x)" } else { "true map" };
    let mut series = vec![Series::line(truth_label, grid.iter().map(|r| (r.x, r.truth)).collect())];
    if grid.iter().any(|r| r.estimate.is_some()) {
        series.push(Series::line("estimate", grid.iter().filter_map(|r| r.estimate.map(|e| (r.x, e))).collect()));
    }
    let marker_label = if fig.name == FigureName::Fig3 { "centroid weights" } else { "measurements" };
    series.push(Series::markers(marker_label, marks));
    LinePlot {
        title: fig.title.clone(),
        x_label: "x [m]".into(),
        y_label: if fig.name == FigureName::Fig3 { "f(x)".into() } else { "power [dB]".into() },
        series,
    }
    .render()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for n in FigureName::ALL {
            assert_eq!(n.to_string().parse::<FigureName>().unwrap(), n);
        }
        assert!("fig9".parse::<FigureName>().is_err());
    }

    #[test]
    fn parametric_beats_polynomial() {
        let scn = ToyScenario::default();
        let a = reproduce(FigureName::Fig1, &scn, 1).unwrap().test_mse.unwrap();
        let b = reproduce(FigureName::Fig2, &scn, 1).unwrap().test_mse.unwrap();
        assert!(a < b, "{a} vs {b}");
    }

    #[test]
    fn fig3_has_five_terms() {
        let f = reproduce(FigureName::Fig3, &ToyScenario::default(), 2).unwrap();
        assert_eq!(f.expansion_terms, Some(5));
        assert_eq!(f.rows.iter().filter(|r| r.measurement.is_some()).count(), 5);
    }

    #[test]
    fn more_measurements_help_krr() {
        let scn = ToyScenario::default();
        let (mut a, mut b) = (0.0, 0.0);
        for seed in 0..20 {
            a += reproduce(FigureName::Fig4, &scn, seed).unwrap().test_mse.unwrap();
            b += reproduce(FigureName::Fig5, &scn, seed).unwrap().test_mse.unwrap();
        }
        assert!(b < a, "{b} vs {a}");
    }

    #[test]
    fn outputs_are_deterministic() {
        let scn = ToyScenario::default();
        for n in FigureName::ALL {
            let render = |seed| {
                let f = reproduce(n, &scn, seed).unwrap();
                let mut csv = Vec::new();
                write_figure_csv(&f, &mut csv).unwrap();
                (csv, figure_svg(&f))
            };
            assert_eq!(render(7), render(7));
        }
    }

    #[test]
    fn csv_marks_measurements() {
        let f = reproduce(FigureName::Fig1, &ToyScenario::default(), 3).unwrap();
        let mut csv = Vec::new();
        write_figure_csv(&f, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x,truth,estimate,measurement\n"));
        assert_eq!(text.lines().filter(|l| !l.ends_with(',')).count() - 1, 16);
    }
}

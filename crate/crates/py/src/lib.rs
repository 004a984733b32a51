//! Python bindings for the radio map toolkit.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use radiomap::completion::{complete as complete_grid, PartialGridObservation};
use radiomap::figures::{reproduce, FigureName, ToyScenario};
use radiomap::kernels::{fit_krr as krr, Kernel};
use radiomap::kriging::{build_covariance, fit_kriging as kriging, MeanModel};
use radiomap::parametric::{fit_lasso as lasso, fit_ls, friis_basis, LinearMapEstimate};
use radiomap::scenario::Scenario;
use radiomap::simulator::{draw_measurements, FadingParams, Realization, ShadowingParams};
use radiomap::{Error, Grid, GridMap, Location, MapEstimator, MeasurementSet, Region, Unit};

create_exception!(radiomap_py, RadioMapError, PyException);

fn err(e: Error) -> PyErr {
    RadioMapError::new_err(e.to_string())
}

fn location(coords: &[f64]) -> PyResult<Location> {
    Location::new(coords).map_err(err)
}

fn unit(name: &str) -> PyResult<Unit> {
    match name {
        "watts" => Ok(Unit::Watts),
        "db" => Ok(Unit::Db),
        "db2" => Ok(Unit::DbSquared),
        "unitless" => Ok(Unit::Unitless),
        _ => Err(RadioMapError::new_err(format!("unknown unit '{name}'"))),
    }
}

fn unit_name(u: Unit) -> &'static str {
    match u {
        Unit::Watts => "watts",
        Unit::Db => "db",
        Unit::DbSquared => "db2",
        Unit::Unitless => "unitless",
    }
}

/// Regular grid of cell centres over a box.
#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid(Grid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> PyResult<Self> {
        let region = Region::new(location(&lower)?, location(&upper)?).map_err(err)?;
        Grid::new(region, counts).map(PyGrid).map_err(err)
    }

    fn points(&self) -> Vec<Vec<f64>> {
        self.0.points().iter().map(|p| p.coords().to_vec()).collect()
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.0.counts().to_vec()
    }

    #[getter]
    fn cell_diagonal(&self) -> f64 {
        self.0.cell_diagonal()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Values on a grid, flattened with the first axis fastest.
#[pyclass(name = "GridMap", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGridMap(GridMap);

#[pymethods]
impl PyGridMap {
    #[new]
    #[pyo3(signature = (grid, values, unit = "watts"))]
    fn new(grid: &PyGrid, values: Vec<f64>, unit: &str) -> PyResult<Self> {
        GridMap::new(grid.0.clone(), values, self::unit(unit)?).map(PyGridMap).map_err(err)
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    #[getter]
    fn unit(&self) -> &'static str {
        unit_name(self.0.unit())
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid().clone())
    }

    fn value_at(&self, loc: Vec<f64>) -> PyResult<f64> {
        Ok(self.0.value_at(&location(&loc)?))
    }

    fn to_db(&self) -> PyResult<Self> {
        self.0.to_db().map(PyGridMap).map_err(err)
    }

    fn to_watts(&self) -> PyResult<Self> {
        self.0.to_watts().map(PyGridMap).map_err(err)
    }

    fn mse(&self, truth: &PyGridMap) -> PyResult<f64> {
        self.0.mse(&truth.0).map_err(err)
    }

    fn mae(&self, truth: &PyGridMap) -> PyResult<f64> {
        self.0.mae(&truth.0).map_err(err)
    }
}

/// Point measurements with a shared noise variance.
#[pyclass(name = "MeasurementSet", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMeasurementSet(MeasurementSet);

#[pymethods]
impl PyMeasurementSet {
    #[new]
    #[pyo3(signature = (locations, values, noise_variance = 0.0, unit = "watts"))]
    fn new(locations: Vec<Vec<f64>>, values: Vec<f64>, noise_variance: f64, unit: &str) -> PyResult<Self> {
        if locations.len() != values.len() {
            return Err(err(Error::DimensionMismatch { expected: locations.len(), found: values.len() }));
        }
        let points = locations.iter().map(|l| location(l)).zip(values).map(|(l, v)| l.map(|l| (l, v))).collect::<PyResult<Vec<_>>>()?;
        MeasurementSet::from_points(&points, noise_variance, self::unit(unit)?).map(PyMeasurementSet).map_err(err)
    }

    #[getter]
    fn locations(&self) -> Vec<Vec<f64>> {
        self.0.locations().iter().map(|p| p.coords().to_vec()).collect()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values()
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.0.noise_variance()
    }

    #[getter]
    fn unit(&self) -> &'static str {
        unit_name(self.0.unit())
    }

    fn to_db(&self) -> PyResult<Self> {
        let db = self.0.values().into_iter().map(radiomap::linear_to_db).collect::<Result<Vec<_>, _>>().map_err(err)?;
        self.0.with_values(&db, Unit::Db).map(PyMeasurementSet).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Environment and evaluation grid read from a scenario JSON file.
#[pyclass(name = "Scenario", frozen)]
struct PyScenario(Scenario);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Scenario::load(&path).map(PyScenario).map_err(err)
    }

    #[getter]
    fn grid(&self) -> PyResult<PyGrid> {
        self.0.grid.build().map(PyGrid).map_err(err)
    }

    /// Draws the shadowing and fading fields on the scenario grid.
    fn realize(&self) -> PyResult<PyRealization> {
        let grid = self.0.grid.build().map_err(err)?;
        self.0.environment.realize(&grid).map(PyRealization).map_err(err)
    }
}

/// One random draw of an environment.
#[pyclass(name = "Realization", frozen)]
struct PyRealization(Realization);

#[pymethods]
impl PyRealization {
    fn power_map(&self) -> PyGridMap {
        PyGridMap(self.0.power_map())
    }

    fn received_power(&self, loc: Vec<f64>) -> PyResult<f64> {
        Ok(self.0.received_power(&location(&loc)?))
    }

    #[getter]
    fn distance_floor(&self) -> f64 {
        self.0.distance_floor()
    }

    /// Noisy received-power samples in watts.
    #[pyo3(signature = (locations, noise_variance = 0.0, seed = 0))]
    fn measure(&self, locations: Vec<Vec<f64>>, noise_variance: f64, seed: u64) -> PyResult<PyMeasurementSet> {
        let locs = locations.iter().map(|l| location(l)).collect::<PyResult<Vec<_>>>()?;
        draw_measurements(&self.0, &locs, noise_variance, seed).map(PyMeasurementSet).map_err(err)
    }
}

/// A fitted map that can be evaluated anywhere.
#[pyclass(name = "Estimate", frozen)]
struct PyEstimate {
    inner: Box<dyn MapEstimator>,
    linear: Option<LinearMapEstimate>,
}

impl PyEstimate {
    fn boxed(inner: impl MapEstimator + 'static) -> Self {
        Self { inner: Box::new(inner), linear: None }
    }

    fn linear(est: LinearMapEstimate) -> Self {
        Self { inner: Box::new(est.clone()), linear: Some(est) }
    }
}

#[pymethods]
impl PyEstimate {
    fn evaluate(&self, loc: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.evaluate(&location(&loc)?))
    }

    fn to_grid_map(&self, grid: &PyGrid) -> PyGridMap {
        PyGridMap(self.inner.to_grid_map(&grid.0))
    }

    #[getter]
    fn unit(&self) -> &'static str {
        unit_name(self.inner.unit())
    }

    /// Basis coefficients of parametric fits, `None` otherwise.
    #[getter]
    fn coefficients(&self) -> Option<Vec<f64>> {
        self.linear.as_ref().map(|l| l.coefficients.clone())
    }

    #[getter]
    fn support(&self) -> Option<Vec<usize>> {
        self.linear.as_ref().map(LinearMapEstimate::support)
    }
}

/// Kernel ridge regression with a Gaussian kernel.
#[pyfunction]
#[pyo3(signature = (data, sigma, lambda_))]
fn fit_krr(data: &PyMeasurementSet, sigma: f64, lambda_: f64) -> PyResult<PyEstimate> {
    let kernel = Kernel::rbf(sigma).map_err(err)?;
    krr(&kernel, &data.0, lambda_).map(PyEstimate::boxed).map_err(err)
}

/// Simple kriging of dB data under Gudmundson shadowing with a constant mean.
#[pyfunction]
#[pyo3(signature = (data, sigma2_s, delta_c, mean = 0.0, sigma2_f = 0.0))]
fn fit_kriging(data: &PyMeasurementSet, sigma2_s: f64, delta_c: f64, mean: f64, sigma2_f: f64) -> PyResult<PyEstimate> {
    let model = build_covariance(
        ShadowingParams::new(sigma2_s, delta_c, 0.0).map_err(err)?,
        FadingParams::new(sigma2_f, 0.0).map_err(err)?,
        MeanModel::Constant { value: mean },
    )
    .map_err(err)?;
    kriging(&model, &data.0).map(PyEstimate::boxed).map_err(err)
}

/// Least squares over the Friis gains of known transmitter locations.
#[pyfunction]
fn fit_friis_ls(data: &PyMeasurementSet, transmitters: Vec<Vec<f64>>, exponent: f64, d_min: f64) -> PyResult<PyEstimate> {
    let txs = transmitters.iter().map(|l| location(l)).collect::<PyResult<Vec<_>>>()?;
    let basis = friis_basis(&txs, exponent, d_min).map_err(err)?;
    fit_ls(&basis, &data.0).map(PyEstimate::linear).map_err(err)
}

/// Sparse transmitter localisation over the cells of `grid`.
#[pyfunction]
#[pyo3(signature = (grid, data, lambda_, exponent, d_min))]
fn fit_lasso(grid: &PyGrid, data: &PyMeasurementSet, lambda_: f64, exponent: f64, d_min: f64) -> PyResult<PyEstimate> {
    lasso(&grid.0, &data.0, lambda_, exponent, d_min).map(PyEstimate::linear).map_err(err)
}

/// Nuclear-norm completion of binned dB measurements on a 2D grid.
/// Returns the completed map and whether the solver converged.
#[pyfunction]
#[pyo3(signature = (grid, data, lambda_))]
fn complete(grid: &PyGrid, data: &PyMeasurementSet, lambda_: f64) -> PyResult<(PyGridMap, bool)> {
    let obs = PartialGridObservation::from_measurements(&grid.0, &data.0).map_err(err)?;
    let r = complete_grid(&obs, lambda_).map_err(err)?;
    Ok((PyGridMap(r.map), r.converged))
}

/// Reproduces a toy road figure (`fig1`..`fig5`).
#[pyfunction]
#[pyo3(signature = (name, seed = 0))]
fn figure<'py>(py: Python<'py>, name: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let name: FigureName = name.parse().map_err(err)?;
    let fig = reproduce(name, &ToyScenario::default(), seed).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("title", fig.title)?;
    out.set_item("test_mse", fig.test_mse)?;
    out.set_item("expansion_terms", fig.expansion_terms)?;
    out.set_item("x", fig.rows.iter().map(|r| r.x).collect::<Vec<_>>())?;
    out.set_item("truth", fig.rows.iter().map(|r| r.truth).collect::<Vec<_>>())?;
    out.set_item("estimate", fig.rows.iter().map(|r| r.estimate).collect::<Vec<_>>())?;
    out.set_item("measurement", fig.rows.iter().map(|r| r.measurement).collect::<Vec<_>>())?;
    Ok(out)
}

#[pymodule]
fn radiomap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RadioMapError", m.py().get_type::<RadioMapError>())?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyGridMap>()?;
    m.add_class::<PyMeasurementSet>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRealization>()?;
    m.add_class::<PyEstimate>()?;
    m.add_function(wrap_pyfunction!(fit_krr, m)?)?;
    m.add_function(wrap_pyfunction!(fit_kriging, m)?)?;
    m.add_function(wrap_pyfunction!(fit_friis_ls, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lasso, m)?)?;
    m.add_function(wrap_pyfunction!(complete, m)?)?;
    m.add_function(wrap_pyfunction!(figure, m)?)?;
    Ok(())
}

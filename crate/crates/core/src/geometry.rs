//! Locations, regions, cell-centred grids and unit-tagged grid maps.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A point in 1, 2 or 3 dimensional space, in meters.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Location {
    coords: [f64; 3],
    dim: usize,
}

impl Location {
    pub fn new(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || coords.len() > 3 {
            return invalid(format!(
                "location must have 1 to 3 coordinates, got {}",
                coords.len()
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return invalid("location coordinates must be finite");
        }
        let mut c = [0.0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self {
            coords: c,
            dim: coords.len(),
        })
    }

    /// 1D location. Panics on non-finite input.
    pub fn x(x: f64) -> Self {
        Self::new(&[x]).expect("finite coordinate")
    }

    /// 2D location. Panics on non-finite input.
    pub fn xy(x: f64, y: f64) -> Self {
        Self::new(&[x, y]).expect("finite coordinates")
    }

    /// 3D location. Panics on non-finite input.
    pub fn xyz(x: f64, y: f64, z: f64) -> Self {
        Self::new(&[x, y, z]).expect("finite coordinates")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn get(&self, axis: usize) -> f64 {
        self.coords()[axis]
    }

    pub fn distance(&self, other: &Location) -> f64 {
        debug_assert_eq!(self.dim, other.dim, "mixed-dimension distance");
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Point at `self + t (other - self)`.
    pub fn lerp(&self, other: &Location, t: f64) -> Location {
        let mut c = self.coords;
        for (i, ci) in c.iter_mut().enumerate().take(self.dim) {
            *ci += t * (other.coords[i] - self.coords[i]);
        }
        Location {
            coords: c,
            dim: self.dim,
        }
    }

    pub fn midpoint(&self, other: &Location) -> Location {
        self.lerp(other, 0.5)
    }
}

impl fmt::Debug for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Location{:?}", self.coords())
    }
}

impl TryFrom<Vec<f64>> for Location {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Location::new(&v)
    }
}

impl From<Location> for Vec<f64> {
    fn from(l: Location) -> Self {
        l.coords().to_vec()
    }
}

/// Unit tag carried by every map and measurement set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    /// Linear power.
    Watts,
    /// Logarithmic power or gain.
    Db,
    /// Variance of a dB quantity.
    #[serde(rename = "db2")]
    DbSquared,
    /// Dimensionless (e.g. spatial loss field values).
    Unitless,
}

impl Unit {
    pub fn ensure(self, expected: Unit) -> Result<()> {
        if self == expected {
            Ok(())
        } else {
            Err(Error::UnitMismatch {
                expected,
                found: self,
            })
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::Domain(format!(
            "linear_to_db requires a positive value, got {v}"
        )));
    }
    Ok(10.0 * v.log10())
}

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    lower: Location,
    upper: Location,
}

impl Region {
    pub fn new(lower: Location, upper: Location) -> Result<Self> {
        if lower.dim() != upper.dim() {
            return Err(Error::DimensionMismatch {
                expected: lower.dim(),
                found: upper.dim(),
            });
        }
        if lower.coords().iter().zip(upper.coords()).any(|(l, u)| l > u) {
            return invalid("region lower corner exceeds upper corner");
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(Location::new(&[lo])?, Location::new(&[hi])?)
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(Location::new(&[x0, y0])?, Location::new(&[x1, y1])?)
    }

    pub fn lower(&self) -> &Location {
        &self.lower
    }

    pub fn upper(&self) -> &Location {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn contains(&self, loc: &Location) -> bool {
        loc.dim() == self.dim()
            && (0..self.dim()).all(|i| loc.get(i) >= self.lower.get(i) && loc.get(i) <= self.upper.get(i))
    }

    pub fn clamp(&self, loc: &Location) -> Location {
        let c: Vec<f64> = (0..self.dim())
            .map(|i| loc.get(i).clamp(self.lower.get(i), self.upper.get(i)))
            .collect();
        Location::new(&c).expect("clamped coordinates are finite")
    }
}

/// Cell-centred rectangular grid. Points are enumerated in row-major order:
/// the last axis varies fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    region: Region,
    counts: Vec<usize>,
}

impl Grid {
    pub fn new(region: Region, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != region.dim() {
            return Err(Error::DimensionMismatch {
                expected: region.dim(),
                found: counts.len(),
            });
        }
        if counts.contains(&0) {
            return invalid("grid cell counts must be positive");
        }
        Ok(Self { region, counts })
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_size(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| (self.region.upper.get(i) - self.region.lower.get(i)) / self.counts[i] as f64)
            .collect()
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell_size().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            idx[axis] = flat % self.counts[axis];
            flat /= self.counts[axis];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.counts)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn point(&self, flat: usize) -> Location {
        let cell = self.cell_size();
        let idx = self.multi_index(flat);
        let c: Vec<f64> = (0..self.dim())
            .map(|a| self.region.lower.get(a) + (idx[a] as f64 + 0.5) * cell[a])
            .collect();
        Location::new(&c).expect("grid points are finite")
    }

    pub fn points(&self) -> Vec<Location> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Index of the grid point nearest to `loc`. Locations outside the
    /// region are clamped first; ties go to the lower index.
    pub fn nearest_index(&self, loc: &Location) -> usize {
        let loc = self.region.clamp(loc);
        let cell = self.cell_size();
        let idx: Vec<usize> = (0..self.dim())
            .map(|a| {
                if cell[a] == 0.0 {
                    return 0;
                }
                let t = (loc.get(a) - self.region.lower.get(a)) / cell[a] - 0.5;
                let i = (t - 0.5).ceil();
                (i.max(0.0) as usize).min(self.counts[a] - 1)
            })
            .collect();
        self.flat_index(&idx)
    }

    /// Index of the cell containing `loc`, or `None` when outside.
    pub fn cell_containing(&self, loc: &Location) -> Option<usize> {
        if !self.region.contains(loc) {
            return None;
        }
        let cell = self.cell_size();
        let idx: Vec<usize> = (0..self.dim())
            .map(|a| {
                let t = ((loc.get(a) - self.region.lower.get(a)) / cell[a]).floor();
                (t.max(0.0) as usize).min(self.counts[a] - 1)
            })
            .collect();
        Some(self.flat_index(&idx))
    }
}

/// Values on a grid, tagged with their unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    grid: Grid,
    values: Vec<f64>,
    unit: Unit,
}

impl GridMap {
    pub fn new(grid: Grid, values: Vec<f64>, unit: Unit) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self { grid, values, unit })
    }

    pub fn constant(grid: Grid, value: f64, unit: Unit) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![value; n],
            unit,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at the grid point nearest to `loc`.
    pub fn value_at(&self, loc: &Location) -> f64 {
        self.values[self.grid.nearest_index(loc)]
    }

    pub fn to_db(&self) -> Result<GridMap> {
        self.unit.ensure(Unit::Watts)?;
        let values = self
            .values
            .iter()
            .map(|&v| linear_to_db(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(GridMap {
            grid: self.grid.clone(),
            values,
            unit: Unit::Db,
        })
    }

    pub fn to_watts(&self) -> Result<GridMap> {
        self.unit.ensure(Unit::Db)?;
        Ok(GridMap {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| db_to_linear(v)).collect(),
            unit: Unit::Watts,
        })
    }

    /// Pointwise sum of two maps on the same grid with the same unit.
    pub fn add(&self, other: &GridMap) -> Result<GridMap> {
        other.unit.ensure(self.unit)?;
        if self.grid != other.grid {
            return invalid("cannot add maps on different grids");
        }
        Ok(GridMap {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            unit: self.unit,
        })
    }

    pub fn mse(&self, truth: &GridMap) -> Result<f64> {
        truth.unit.ensure(self.unit)?;
        if self.grid != truth.grid {
            return invalid("cannot compare maps on different grids");
        }
        let n = self.values.len() as f64;
        Ok(self
            .values
            .iter()
            .zip(&truth.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }

    pub fn mae(&self, truth: &GridMap) -> Result<f64> {
        truth.unit.ensure(self.unit)?;
        if self.grid != truth.grid {
            return invalid("cannot compare maps on different grids");
        }
        let n = self.values.len() as f64;
        Ok(self
            .values
            .iter()
            .zip(&truth.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n)
    }

    /// 2D maps as an I×J matrix (row i = first axis index).
    pub fn as_matrix(&self) -> Result<DMatrix<f64>> {
        if self.grid.dim() != 2 {
            return invalid("matrix view requires a 2D grid");
        }
        let (i, j) = (self.grid.counts[0], self.grid.counts[1]);
        Ok(DMatrix::from_row_slice(i, j, &self.values))
    }

    pub fn from_matrix(grid: Grid, m: &DMatrix<f64>, unit: Unit) -> Result<GridMap> {
        if grid.dim() != 2 || grid.counts[0] != m.nrows() || grid.counts[1] != m.ncols() {
            return invalid("matrix shape does not match the 2D grid");
        }
        let values = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        GridMap::new(grid, values, unit)
    }
}

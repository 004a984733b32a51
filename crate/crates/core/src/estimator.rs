use crate::geometry::{Grid, GridMap, Location, Unit};

/// A fitted map: deterministic evaluation at any location.
pub trait MapEstimator: Send + Sync {
    fn evaluate(&self, loc: &Location) -> f64;

    /// Unit of the evaluated values.
    fn unit(&self) -> Unit;

    fn to_grid_map(&self, grid: &Grid) -> GridMap {
        let values = grid.points().iter().map(|p| self.evaluate(p)).collect();
        GridMap::new(grid.clone(), values, self.unit()).expect("one value per grid point")
    }
}

impl<T: MapEstimator + ?Sized> MapEstimator for Box<T> {
    fn evaluate(&self, loc: &Location) -> f64 {
        (**self).evaluate(loc)
    }

    fn unit(&self) -> Unit {
        (**self).unit()
    }
}

/// Nearest-grid-point lookup into a map.
impl MapEstimator for GridMap {
    fn evaluate(&self, loc: &Location) -> f64 {
        self.value_at(loc)
    }

    fn unit(&self) -> Unit {
        GridMap::unit(self)
    }
}

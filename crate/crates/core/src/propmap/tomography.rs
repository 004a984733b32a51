//! Radio tomography: the shadowing attenuation of a link is
//! `(1/√‖a−b‖) ∫_a^b F(x̄) dx̄` over a non-negative spatial loss field F.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Grid, GridMap, Location, Unit};
use crate::linalg::largest_sq_singular_value;
use crate::measurement::MeasurementSet;

/// Spatial loss field: non-negative values on grid cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridMap", into = "GridMap")]
pub struct Slf(GridMap);

impl Slf {
    pub fn new(map: GridMap) -> Result<Self> {
        if map.values().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid("spatial loss field values must be finite and non-negative");
        }
        Ok(Self(map))
    }

    pub fn zeros(grid: Grid) -> Self {
        Self(GridMap::constant(grid, 0.0, Unit::Unitless))
    }

    pub fn grid(&self) -> &Grid {
        self.0.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn as_map(&self) -> &GridMap {
        &self.0
    }
}

impl TryFrom<GridMap> for Slf {
    type Error = Error;

    fn try_from(m: GridMap) -> Result<Self> {
        Slf::new(m)
    }
}

impl From<Slf> for GridMap {
    fn from(s: Slf) -> Self {
        s.0
    }
}

/// Discretisation of the line integral.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightModel {
    /// Exact ray/grid traversal: each cell weighted by the length the link
    /// travels inside it.
    Piecewise,
    /// Uniform weights over the grid points inside the ellipse with foci at
    /// the link endpoints and major axis `length + excess`. `excess` defaults
    /// to 5 % of the link length.
    Ellipse {
        #[serde(default)]
        excess_path_length: Option<f64>,
        #[serde(default)]
        weight_rule: EllipseWeightRule,
    },
}

impl WeightModel {
    pub fn ellipse() -> Self {
        WeightModel::Ellipse { excess_path_length: None, weight_rule: EllipseWeightRule::default() }
    }
}

/// Per-point weight for the ellipse model, with `n` interior points and link
/// length `d`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EllipseWeightRule {
    /// `1 / (n √d)`
    #[default]
    InverseArea,
    /// `√d / n`: a uniform field then integrates to the same value as the
    /// piecewise model.
    PathLength,
}

/// Lengths travelled by the segment `a`–`b` inside each grid cell, in order
/// along the segment. Portions outside the grid are dropped.
pub fn crossing_lengths(grid: &Grid, a: &Location, b: &Location) -> Vec<(usize, f64)> {
    let d = a.distance(b);
    if d == 0.0 {
        return Vec::new();
    }
    let cell = grid.cell_size();
    let lower = grid.region().lower();
    let mut ts = vec![0.0, 1.0];
    for (axis, &size) in cell.iter().enumerate() {
        let (pa, pb) = (a.get(axis), b.get(axis));
        if pa == pb {
            continue;
        }
        for k in 0..=grid.counts()[axis] {
            let plane = lower.get(axis) + k as f64 * size;
            let t = (plane - pa) / (pb - pa);
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for w in ts.windows(2) {
        let len = (w[1] - w[0]) * d;
        if len <= 0.0 {
            continue;
        }
        let mid = a.lerp(b, 0.5 * (w[0] + w[1]));
        if let Some(c) = grid.cell_containing(&mid) {
            match out.last_mut() {
                Some((last, l)) if *last == c => *l += len,
                _ => out.push((c, len)),
            }
        }
    }
    out
}

/// Sparse weights `(cell, w)` such that the line integral is `Σ w F[cell]`.
pub fn link_weights(grid: &Grid, a: &Location, b: &Location, model: &WeightModel) -> Result<Vec<(usize, f64)>> {
    let d = a.distance(b);
    if d <= 0.0 {
        return invalid("zero-length link");
    }
    let scale = 1.0 / d.sqrt();
    match model {
        WeightModel::Piecewise => Ok(crossing_lengths(grid, a, b)
            .into_iter()
            .map(|(c, l)| (c, l * scale))
            .collect()),
        WeightModel::Ellipse { excess_path_length, weight_rule } => {
            let excess = excess_path_length.unwrap_or(0.05 * d);
            if !(excess >= 0.0) {
                return invalid("ellipse excess path length must be non-negative");
            }
            let inside: Vec<usize> = (0..grid.len())
                .filter(|&i| {
                    let p = grid.point(i);
                    p.distance(a) + p.distance(b) <= d + excess
                })
                .collect();
            if inside.is_empty() {
                return Ok(Vec::new());
            }
            let n = inside.len() as f64;
            let w = match weight_rule {
                EllipseWeightRule::InverseArea => scale / n,
                EllipseWeightRule::PathLength => d * scale / n,
            };
            Ok(inside.into_iter().map(|i| (i, w)).collect())
        }
    }
}

pub fn line_integral(slf: &Slf, a: &Location, b: &Location, model: &WeightModel) -> Result<f64> {
    let v = slf.values();
    Ok(link_weights(slf.grid(), a, b, model)?
        .into_iter()
        .map(|(c, w)| w * v[c])
        .sum())
}

/// Row n of `W` holds the weights of link n; `y` the link shadowing values.
pub fn assemble_tomography(
    links: &MeasurementSet,
    grid: &Grid,
    model: &WeightModel,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !links.is_link_dataset() && !links.is_empty() {
        return invalid("tomography requires link measurements");
    }
    let rows: Vec<Vec<(usize, f64)>> = links
        .measurements()
        .par_iter()
        .map(|m| link_weights(grid, &m.location, m.second_location.as_ref().expect("link dataset"), model))
        .collect::<Result<_>>()?;
    let mut w = DMatrix::zeros(links.len(), grid.len());
    for (n, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            w[(n, c)] += v;
        }
    }
    Ok((w, DVector::from_vec(links.values())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlfRegularizer {
    /// ‖F‖²
    Ridge,
    /// Fᵀ L_g F with the nearest-neighbour grid Laplacian.
    Laplacian,
}

/// Nearest-neighbour (2·dim stencil) graph Laplacian of a grid.
pub fn grid_laplacian(grid: &Grid) -> DMatrix<f64> {
    let n = grid.len();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let idx = grid.multi_index(i);
        for axis in 0..grid.dim() {
            if idx[axis] + 1 < grid.counts()[axis] {
                let mut nb = idx.clone();
                nb[axis] += 1;
                let j = grid.flat_index(&nb);
                l[(i, j)] -= 1.0;
                l[(j, i)] -= 1.0;
                l[(i, i)] += 1.0;
                l[(j, j)] += 1.0;
            }
        }
    }
    l
}

#[derive(Clone, Debug)]
pub struct SlfEstimate {
    pub slf: Slf,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
}

/// `min_{F ≥ 0} ‖y − W F‖² + λ R(F)` by accelerated projected gradient
/// with adaptive restart, to a projected-gradient stationarity of 1e-8.
pub fn estimate_slf(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    regularizer: SlfRegularizer,
    grid: &Grid,
) -> Result<SlfEstimate> {
    const TOL: f64 = 1e-8;
    const MAX_ITER: usize = 100_000;
    if !(lambda >= 0.0) {
        return invalid("regularization weight must be non-negative");
    }
    if w.ncols() != grid.len() || w.nrows() != y.len() {
        return invalid("tomography system shape does not match grid and data");
    }
    let n = grid.len();
    let reg = match regularizer {
        SlfRegularizer::Ridge => DMatrix::identity(n, n),
        SlfRegularizer::Laplacian => grid_laplacian(grid),
    };
    let reg_norm = match regularizer {
        SlfRegularizer::Ridge => 1.0,
        SlfRegularizer::Laplacian => 4.0 * grid.dim() as f64,
    };
    let lip = 2.0 * largest_sq_singular_value(w) + 2.0 * lambda * reg_norm;
    let objective = |f: &DVector<f64>| (y - w * f).norm_squared() + lambda * f.dot(&(&reg * f));
    let grad = |f: &DVector<f64>| 2.0 * w.tr_mul(&(w * f - y)) + 2.0 * lambda * (&reg * f);
    let project = |v: DVector<f64>| v.map(|x| x.max(0.0));

    let mut f = DVector::zeros(n);
    if lip == 0.0 {
        return Ok(SlfEstimate {
            slf: Slf::new(GridMap::new(grid.clone(), f.iter().copied().collect(), Unit::Unitless)?)?,
            converged: true,
            iterations: 0,
            objective: objective(&DVector::zeros(n)),
        });
    }
    let scale = (2.0 * w.tr_mul(y)).amax().max(1.0);
    let step = 1.0 / lip;
    let mut z = f.clone();
    let mut t = 1.0f64;
    let mut obj = objective(&f);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=MAX_ITER {
        iterations = it;
        let next = project(&z - grad(&z) * step);
        let next_obj = objective(&next);
        // Restart momentum whenever the objective goes up.
        if next_obj > obj {
            z = f.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &f) * ((t - 1.0) / t_next);
        t = t_next;
        f = next;
        obj = next_obj;
        let pg = (&f - project(&f - grad(&f) * step)) * lip;
        if pg.amax() <= TOL * scale {
            converged = true;
            break;
        }
    }
    Ok(SlfEstimate {
        slf: Slf::new(GridMap::new(grid.clone(), f.iter().map(|v| v.max(0.0)).collect(), Unit::Unitless)?)?,
        converged,
        iterations,
        objective: obj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Region;
    use crate::measurement::Measurement;

    fn grid8() -> Grid {
        Grid::new(Region::rect(0.0, 0.0, 8.0, 8.0).unwrap(), vec![8, 8]).unwrap()
    }

    #[test]
    fn uniform_field_piecewise() {
        let g = grid8();
        let c = 0.7;
        let slf = Slf::new(GridMap::constant(g.clone(), c, Unit::Unitless)).unwrap();
        let a = Location::xy(0.3, 1.1);
        let b = Location::xy(7.2, 6.9);
        let d = a.distance(&b);
        let v = line_integral(&slf, &a, &b, &WeightModel::Piecewise).unwrap();
        assert!((v - c * d.sqrt()).abs() < 1e-9);
        let total: f64 = crossing_lengths(&g, &a, &b).iter().map(|(_, l)| l).sum();
        assert!((total - d).abs() < 1e-9);
    }

    #[test]
    fn zero_length_link_is_an_error() {
        let g = grid8();
        let slf = Slf::zeros(g);
        let a = Location::xy(1.0, 1.0);
        assert!(line_integral(&slf, &a, &a, &WeightModel::Piecewise).is_err());
    }

    #[test]
    fn single_cell_matches_dense_quadrature() {
        let g = grid8();
        let mut vals = vec![0.0; 64];
        let target = g.flat_index(&[3, 4]);
        vals[target] = 1.0;
        let slf = Slf::new(GridMap::new(g.clone(), vals, Unit::Unitless).unwrap()).unwrap();
        let a = Location::xy(0.2, 2.9);
        let b = Location::xy(7.7, 6.3);
        let v = line_integral(&slf, &a, &b, &WeightModel::Piecewise).unwrap();
        // Midpoint rule with 10⁴ samples along the link.
        let n = 10_000;
        let d = a.distance(&b);
        let mut acc = 0.0;
        for k in 0..n {
            let p = a.lerp(&b, (k as f64 + 0.5) / n as f64);
            let cx = p.get(0).floor() as usize;
            let cy = p.get(1).floor() as usize;
            if cx == 3 && cy == 4 {
                acc += d / n as f64;
            }
        }
        let quad = acc / d.sqrt();
        assert!(v > 0.0);
        assert!((v - quad).abs() < 1e-3 * d.sqrt(), "{v} vs {quad}");
    }

    #[test]
    fn ellipse_missing_all_points_is_zero() {
        let g = Grid::new(Region::rect(0.0, 0.0, 4.0, 4.0).unwrap(), vec![2, 2]).unwrap();
        let slf = Slf::new(GridMap::constant(g.clone(), 1.0, Unit::Unitless)).unwrap();
        // Short link between grid points: thin ellipse holds none of them.
        let a = Location::xy(1.8, 2.0);
        let b = Location::xy(2.2, 2.0);
        let model = WeightModel::ellipse();
        assert!(link_weights(&g, &a, &b, &model).unwrap().is_empty());
        assert_eq!(line_integral(&slf, &a, &b, &model).unwrap(), 0.0);
    }

    #[test]
    fn ellipse_uniform_field_scales_like_piecewise() {
        let g = grid8();
        let slf = Slf::new(GridMap::constant(g.clone(), 2.0, Unit::Unitless)).unwrap();
        let a = Location::xy(0.5, 0.5);
        let b = Location::xy(7.5, 7.5);
        let d = a.distance(&b);
        let model = WeightModel::Ellipse { excess_path_length: Some(1.0), weight_rule: EllipseWeightRule::PathLength };
        let w = link_weights(&g, &a, &b, &model).unwrap();
        assert!(w.iter().all(|(_, v)| *v >= 0.0));
        let v = line_integral(&slf, &a, &b, &model).unwrap();
        assert!((v - 2.0 * d.sqrt()).abs() < 1e-12);
        let inv = WeightModel::Ellipse { excess_path_length: Some(1.0), weight_rule: EllipseWeightRule::InverseArea };
        let v = line_integral(&slf, &a, &b, &inv).unwrap();
        assert!((v - 2.0 / d.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn assembled_rows_follow_link_order() {
        let g = grid8();
        let l1 = Measurement::link(Location::xy(0.5, 0.5), Location::xy(7.5, 0.5), 1.0);
        let l2 = Measurement::link(Location::xy(0.5, 0.5), Location::xy(0.5, 7.5), 2.0);
        let s12 = MeasurementSet::new(vec![l1.clone(), l2.clone()], 0.0, Unit::Db).unwrap();
        let s21 = MeasurementSet::new(vec![l2, l1], 0.0, Unit::Db).unwrap();
        let (w12, y12) = assemble_tomography(&s12, &g, &WeightModel::Piecewise).unwrap();
        let (w21, y21) = assemble_tomography(&s21, &g, &WeightModel::Piecewise).unwrap();
        assert_eq!(w12.row(0), w21.row(1));
        assert_eq!(w12.row(1), w21.row(0));
        assert_eq!(y12[0], y21[1]);
        let len = 7.0f64;
        assert!((w12.row(0).sum() - len.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn square_system_exact_recovery() {
        let g = Grid::new(Region::rect(0.0, 0.0, 2.0, 2.0).unwrap(), vec![2, 2]).unwrap();
        let w = DMatrix::from_row_slice(4, 4, &[
            2.0, 0.5, 0.0, 0.1, 0.3, 1.5, 0.2, 0.0, 0.0, 0.4, 1.8, 0.3, 0.1, 0.0, 0.6, 2.2,
        ]);
        let truth = DVector::from_vec(vec![0.5, 0.0, 1.2, 0.3]);
        let y = &w * &truth;
        let est = estimate_slf(&w, &y, 0.0, SlfRegularizer::Ridge, &g).unwrap();
        assert!(est.converged);
        for (a, b) in est.slf.values().iter().zip(truth.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let g = grid8();
        let w = DMatrix::from_fn(10, 64, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1);
        let y = DVector::zeros(10);
        for reg in [SlfRegularizer::Ridge, SlfRegularizer::Laplacian] {
            let est = estimate_slf(&w, &y, 0.1, reg, &g).unwrap();
            assert!(est.slf.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let g = Grid::new(Region::rect(0.0, 0.0, 3.0, 4.0).unwrap(), vec![3, 4]).unwrap();
        let l = grid_laplacian(&g);
        for i in 0..l.nrows() {
            assert!(l.row(i).sum().abs() < 1e-15);
        }
        assert!(crate::linalg::max_eigenvalue(&l) <= 8.0);
    }
}
